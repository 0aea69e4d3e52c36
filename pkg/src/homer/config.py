"""Run configuration: one plain-text ``section.key=value`` file for every command.

Example::

    seed=3
    gen.n_requests=20000
    model.d_token=32
    train.lr=0.001
    paths.dataset=runs/data.bin

Sections ``gen``, ``model`` and ``train`` map onto :class:`GenConfig`,
:class:`ModelConfig` and :class:`TrainConfig`; ``paths``, ``ablate``,
``gradcheck`` and ``bench`` hold command options. ``seed`` is mandatory and
seeds data generation, initialisation and shuffling alike.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .synth import GenConfig, coerce
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    dataset: str = ""
    checkpoint: str = ""
    out: str = "."


@dataclass(frozen=True)
class AblateOptions:
    seeds: str = "0,1,2"
    variants: str = "full,no_imp_loss,no_cross_item,pointwise"


@dataclass(frozen=True)
class GradcheckOptions:
    coords: int = 200
    h: float = 1e-5
    requests: int = 4
    tol: float = 1e-4


@dataclass(frozen=True)
class BenchOptions:
    shard: int = 300
    requests: int = 200


_SECTIONS = {
    "gen": GenConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "paths": Paths,
    "ablate": AblateOptions,
    "gradcheck": GradcheckOptions,
    "bench": BenchOptions,
}
# keys owned by the top-level seed
_SEEDED = {"gen": "seed", "model": "seed", "train": "seed"}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)
    ablate: AblateOptions = field(default_factory=AblateOptions)
    gradcheck: GradcheckOptions = field(default_factory=GradcheckOptions)
    bench: BenchOptions = field(default_factory=BenchOptions)

    def to_text(self) -> str:
        """Canonical form: ``seed`` first, then every field of every section in order."""
        lines = [f"seed={self.seed}"]
        for name in _SECTIONS:
            sec = getattr(self, name)
            for f in dataclasses.fields(sec):
                if _SEEDED.get(name) == f.name:
                    continue
                lines.append(f"{name}.{f.name}={getattr(sec, f.name)}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Digest of the canonical text; the output directory does not affect artifacts."""
        text = "".join(l + "\n" for l in self.to_text().splitlines() if not l.startswith("paths.out="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def header(self, command: str) -> str:
        return f"homer {command} config={self.hash()}"

    def with_(self, **kw) -> "RunConfig":
        return parse_config(self.to_text(), **kw)


def parse_config(text: str, seed: int | None = None, variant: str | None = None,
                 out: str | None = None) -> RunConfig:
    """Parse a config file body; the keyword overrides mirror the command-line flags."""
    raw: dict[str, dict[str, str]] = {name: {} for name in _SECTIONS}
    top_seed = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key == "seed":
            top_seed = value
            continue
        section, dot, name = key.partition(".")
        if not dot or section not in _SECTIONS:
            raise ConfigError(f"unknown key: {key}")
        known = {f.name for f in dataclasses.fields(_SECTIONS[section])}
        if name not in known or _SEEDED.get(section) == name:
            raise ConfigError(f"unknown key: {key}")
        raw[section][name] = value
    if seed is not None:
        top_seed = str(seed)
    if top_seed is None:
        raise ConfigError("seed is mandatory")
    try:
        s = int(top_seed)
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {top_seed!r}") from None
    if variant is not None:
        raw["model"]["variant"] = variant
    if out is not None:
        raw["paths"]["out"] = out
    built = {}
    for section, cls in _SECTIONS.items():
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for name, value in raw[section].items():
            try:
                kw[name] = coerce(value, types[name])
            except ValueError as e:
                raise ConfigError(f"{section}.{name}: {e}") from None
        if section in _SEEDED:
            kw[_SEEDED[section]] = s
        try:
            built[section] = cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}: {e}") from None
    return RunConfig(seed=s, **built)


def load_config(path, **overrides) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(), **overrides)


def check_paths(cfg: RunConfig, *required: str) -> None:
    """Fail early when an input path named in ``required`` is unset or missing."""
    for name in required:
        value = getattr(cfg.paths, name)
        if not value:
            raise ConfigError(f"paths.{name} is required for this command")
        if not Path(value).is_file():
            raise ConfigError(f"paths.{name} does not exist: {value}")


__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "check_paths"]
