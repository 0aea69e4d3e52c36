"""Command-line entry point: ``python3 -m homer {gen,train,eval,ablate,gradcheck,bench}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every output file starts with a header line carrying the config hash.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .ablation import run_ablation
from .config import ConfigError, RunConfig, check_paths, load_config, parse_config
from .data import DatasetFormatError, collate, read_dataset, write_dataset
from .gradcheck import grad_check
from .model import VARIANTS, HoMer
from .params import CheckpointError, load_checkpoint, save_checkpoint
from .serving import bench
from .synth import GenConfig, generate
from .train import batch_losses, evaluate, metrics_csv, split_holdout, train_one_epoch

log = logging.getLogger("homer")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("gen", "train", "eval", "ablate", "gradcheck", "bench")


class GradcheckFailed(FloatingPointError):
    pass


def _out(cfg: RunConfig, name: str) -> Path:
    d = Path(cfg.paths.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _write_text(path: Path, text: str) -> None:
    path.write_text(text)
    print(path)


def _dataset(cfg: RunConfig):
    """Samples from ``paths.dataset`` when set, otherwise generated from the gen section."""
    if cfg.paths.dataset:
        return read_dataset(cfg.paths.dataset)
    ds = generate(cfg.gen)
    return ds.schema, ds.samples


def _rows_csv(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def cmd_gen(cfg: RunConfig) -> int:
    ds = generate(cfg.gen)
    path = _out(cfg, "dataset.bin")
    digest = write_dataset(path, ds.samples, ds.schema, meta=cfg.header("gen") + "\n" + cfg.gen.to_text())
    print(f"{path} sha256={digest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    check_paths(cfg, *(["dataset"] if cfg.paths.dataset else []))
    schema, samples = _dataset(cfg)
    res = train_one_epoch(samples, schema, cfg.model, cfg.train)
    header = cfg.header("train")
    ckpt = _out(cfg, "model.ckpt")
    save_checkpoint(ckpt, res.params, meta=header)
    print(ckpt)
    _write_text(_out(cfg, "metrics.csv"), metrics_csv(res.log, header))
    if res.report is not None:
        _write_text(_out(cfg, "eval.csv"), _report_csv(header, res.report))
    return EXIT_OK


def _report_csv(header: str, report) -> str:
    d = report.as_dict()
    return _rows_csv(header, list(d), [[repr(v) if isinstance(v, float) else v for v in d.values()]])


def _load_params(cfg: RunConfig, model: HoMer):
    if not cfg.paths.checkpoint:
        return model.init_params()
    params, _ = load_checkpoint(cfg.paths.checkpoint, np.dtype(cfg.model.dtype))
    expected = {name: shape for name, shape, _ in model.param_shapes()}
    got = {name: params[name].shape for name in params.names()}
    if expected != got:
        raise CheckpointError("checkpoint slots do not match the model section of the config")
    return params


def cmd_eval(cfg: RunConfig) -> int:
    check_paths(cfg, "checkpoint", *(["dataset"] if cfg.paths.dataset else []))
    schema, samples = _dataset(cfg)
    model = HoMer(cfg.model, schema)
    params = _load_params(cfg, model)
    _, held = split_holdout(samples, cfg.train.holdout_frac)
    report = evaluate(model, params, held or samples, cfg.train.eval_batch_size)
    _write_text(_out(cfg, "eval.csv"), _report_csv(cfg.header("eval"), report))
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"not a comma-separated integer list: {text!r}") from None


def cmd_ablate(cfg: RunConfig) -> int:
    check_paths(cfg, *(["dataset"] if cfg.paths.dataset else []))
    if cfg.paths.dataset:
        source = read_dataset(cfg.paths.dataset)
    else:
        def source(seed):
            ds = generate(cfg.gen.with_(seed=seed))
            return ds.schema, ds.samples
    variants = [v.strip() for v in cfg.ablate.variants.split(",") if v.strip()]
    unknown = sorted(set(variants) - set(VARIANTS))
    if unknown:
        raise ConfigError(f"ablate.variants: unknown {unknown}")
    table = run_ablation(source, cfg.model, cfg.train, _int_list(cfg.ablate.seeds), variants)
    header = cfg.header("ablate")
    _write_text(_out(cfg, "ablation.csv"), table.to_csv(header))
    _write_text(_out(cfg, "ablation_mean.csv"), table.to_csv(header, averaged=True))
    return EXIT_OK


def gradcheck_error(cfg: RunConfig) -> float:
    """Whole-model gradient check on a few tiny generated requests in float64."""
    opts = cfg.gradcheck
    gen = GenConfig(n_users=2, n_requests=opts.requests, k_min=2, k_max=4, n_max=6, seed=cfg.seed)
    ds = generate(gen)
    model_cfg = cfg.model.with_(dtype="float64", n_max=gen.n_max)
    model = HoMer(model_cfg, ds.schema)
    params = model.init_params()
    batch = collate(ds.samples, len(ds.samples))[0]
    lam = cfg.train.lam

    def loss_fn(P):
        return batch_losses(model, batch, P, lam)[2]

    return grad_check(loss_fn, params, h=opts.h, n_coords=opts.coords, seed=cfg.seed)


def cmd_gradcheck(cfg: RunConfig) -> int:
    err = gradcheck_error(cfg)
    ok = err <= cfg.gradcheck.tol
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAIL'}, tolerance {cfg.gradcheck.tol:g})")
    _write_text(_out(cfg, "gradcheck.csv"),
                _rows_csv(cfg.header("gradcheck"), ["max_rel_error", "tolerance", "passed"],
                          [[repr(err), repr(cfg.gradcheck.tol), int(ok)]]))
    if not ok:
        raise GradcheckFailed(f"gradient check failed: {err:.3e} > {cfg.gradcheck.tol:g}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    check_paths(cfg, *[p for p in ("dataset", "checkpoint") if getattr(cfg.paths, p)])
    schema, samples = _dataset(cfg)
    model = HoMer(cfg.model, schema)
    params = _load_params(cfg, model)
    report = bench(model, params, samples[: cfg.bench.requests], cfg.bench.shard)
    print(f"set-wise {report.setwise_flops / 1e9:.4f} GFLOPs vs point-wise "
          f"{report.pointwise_flops / 1e9:.4f} GFLOPs; max shard divergence {report.max_shard_divergence:.2e}")
    _write_text(_out(cfg, "bench.csv"), report.to_csv(cfg.header("bench")))
    return EXIT_OK


HANDLERS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homer", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key=value run config")
    p.add_argument("--seed", type=int, metavar="N", help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--variant", metavar="NAME", help="model variant")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = dict(seed=args.seed, variant=args.variant, out=args.out)
    try:
        cfg = load_config(args.config, **overrides) if args.config else parse_config("", **overrides)
        return HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
