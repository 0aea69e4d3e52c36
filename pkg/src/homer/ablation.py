"""Four-variant comparison: full model against its point-wise and ablated siblings."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import RequestSample, Schema
from .model import VARIANTS, ModelConfig, count_flops, count_params, flops_matched_pointwise
from .train import TrainConfig, split_holdout, train_one_epoch

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ("variant", "seed", "auc_clk", "logloss_clk", "auc_exp", "params", "gflops_per_request")

# desk-scale recipe used by the ordering experiment
ABLATION_MODEL = ModelConfig(L=1, M=2, d_embed=8, d_token=32)
ABLATION_TRAIN = TrainConfig(lr=1e-3, batch_size=32)


@dataclass
class AblationRow:
    variant: str
    seed: int
    auc_clk: float
    logloss_clk: float
    auc_exp: float
    params: int
    gflops_per_request: float
    seconds: float = 0.0

    def values(self) -> list:
        return [self.variant, self.seed, self.auc_clk, self.logloss_clk, self.auc_exp,
                self.params, self.gflops_per_request]


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    def mean(self, variant: str, column: str = "auc_clk") -> float:
        vals = [getattr(r, column) for r in self.rows if r.variant == variant]
        if not vals:
            raise KeyError(variant)
        return float(np.mean(vals))

    def summary(self) -> list[AblationRow]:
        """One row per variant, metrics averaged over seeds (seed column = -1)."""
        out = []
        for v in VARIANTS:
            rows = [r for r in self.rows if r.variant == v]
            if not rows:
                continue
            out.append(AblationRow(
                v, -1, self.mean(v, "auc_clk"), self.mean(v, "logloss_clk"), self.mean(v, "auc_exp"),
                rows[0].params, float(np.mean([r.gflops_per_request for r in rows])),
                float(sum(r.seconds for r in rows)),
            ))
        return out

    def to_csv(self, header: str = "", averaged: bool = False) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in (self.summary() if averaged else self.rows):
            w.writerow([repr(x) if isinstance(x, float) else x for x in r.values()])
        return buf.getvalue()


def reference_size(samples: Sequence[RequestSample]) -> tuple[int, int]:
    """Rounded mean (N, K) of a dataset, used to match FLOPs across variants."""
    n = int(round(np.mean([s.n_behaviors for s in samples])))
    k = int(round(np.mean([s.n_items for s in samples])))
    return n, max(k, 1)


def mean_gflops(config: ModelConfig, schema: Schema, samples: Sequence[RequestSample]) -> float:
    total = sum(count_flops(config, s.n_behaviors, s.n_items, schema).total for s in samples)
    return total / max(len(samples), 1) / 1e9


def variant_configs(base: ModelConfig, schema: Schema, samples: Sequence[RequestSample]) -> dict[str, ModelConfig]:
    """The four variants; the point-wise one is deepened to match the full model's FLOPs."""
    n, k = reference_size(samples)
    full = base.with_(variant="full")
    return {
        "full": full,
        "no_imp_loss": full.with_(variant="no_imp_loss"),
        "no_cross_item": full.with_(variant="no_cross_item"),
        "pointwise": flops_matched_pointwise(full, schema, n, k),
    }


def run_ablation(
    dataset: Callable[[int], tuple[Schema, list[RequestSample]]] | tuple[Schema, list[RequestSample]],
    base: ModelConfig = ABLATION_MODEL,
    train: TrainConfig = ABLATION_TRAIN,
    seeds: Sequence[int] = (0,),
    variants: Sequence[str] = VARIANTS,
) -> AblationTable:
    """Train every variant once per seed with identical data, order and budget.

    ``dataset`` is either a fixed ``(schema, samples)`` pair or a callable
    ``seed -> (schema, samples)`` so each seed can draw its own world.
    """
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown variants {sorted(unknown)}")
    table = AblationTable()
    for seed in seeds:
        schema, samples = dataset(seed) if callable(dataset) else dataset
        fit, held = split_holdout(samples, train.holdout_frac)
        configs = variant_configs(base.with_(seed=seed), schema, fit)
        tc = TrainConfig(**{**train.__dict__, "seed": seed})
        for v in variants:
            cfg = configs[v]
            t0 = time.perf_counter()
            res = train_one_epoch(fit, schema, cfg, tc, eval_samples=held)
            rep = res.report
            row = AblationRow(
                v, seed, rep.auc_clk, rep.logloss_clk, rep.auc_exp,
                count_params(cfg, schema), mean_gflops(cfg, schema, held),
                time.perf_counter() - t0,
            )
            log.info("seed %d %s auc_clk %.4f (%.0fs)", seed, v, row.auc_clk, row.seconds)
            table.rows.append(row)
    return table
