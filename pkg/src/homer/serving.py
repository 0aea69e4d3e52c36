"""Online prediction path: shard a request's items, encode once, decode per shard.

Also benchmarks set-wise serving against simulated point-wise serving, where
the behaviour encoder is re-run for every candidate item.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .autograd import count_flops as flop_counter, no_grad
from .data import RequestSample, make_batch
from .model import HoMer, count_flops
from .params import ParamStore

DEFAULT_SHARD = 300
BENCH_COLUMNS = ("k_bucket", "mode", "gflops_per_request", "p50_ms", "p99_ms", "savings_ratio")


@dataclass(frozen=True)
class ShardPlan:
    size: int
    ranges: tuple[tuple[int, int], ...]

    @property
    def n_shards(self) -> int:
        return len(self.ranges)

    def lengths(self) -> list[int]:
        return [b - a for a, b in self.ranges]


def shard_items(k: int, size: int = DEFAULT_SHARD) -> ShardPlan:
    """Contiguous ceiling partition of ``0..k-1``; every shard but the last has ``size`` items."""
    if k < 1 or size < 1:
        raise ValueError("need k >= 1 and size >= 1")
    return ShardPlan(size, tuple((a, min(a + size, k)) for a in range(0, k, size)))


@dataclass
class Prediction:
    p_exp: np.ndarray
    p_clk: np.ndarray
    plan: ShardPlan
    invocations: int


def predict_request(model: HoMer, params: ParamStore, request: RequestSample,
                    shard_size: int = DEFAULT_SHARD) -> Prediction:
    """Score every item of one request.

    The encoder, the context token H and the user-item keys/values run once;
    only the item-dependent decoder runs per shard. Outputs keep item order.
    """
    plan = shard_items(request.n_items, shard_size)
    with no_grad():
        P = params.tensors()
        batch = make_batch([request])
        memory = model.project_memory(model.encode(batch, P), P)
        H = model.tokenize_context(batch, P)
        p_exp, p_clk = [], []
        for a, b in plan.ranges:
            sub = batch if plan.n_shards == 1 else make_batch([request.select_items(np.arange(a, b))])
            _, D0 = model.tokenize_items(sub, P, H)
            D = model.decode(D0, memory, P, sub.item_offsets)
            z_exp, z_clk = model.heads(D, P)
            p_exp.append(ops.sigmoid(z_exp).data.reshape(-1))
            p_clk.append(ops.sigmoid(z_clk).data.reshape(-1))
    return Prediction(np.concatenate(p_exp), np.concatenate(p_clk), plan, plan.n_shards)


def serving_flops(model: HoMer, n: int, k: int, shard_size: int = DEFAULT_SHARD) -> int:
    """Analytic set-wise cost of one request: shared part once, item part per shard."""
    shared = count_flops(model.config, n, 1, model.schema).shared
    return shared + sum(
        count_flops(model.config, n, m, model.schema).total - count_flops(model.config, n, m, model.schema).shared
        for m in shard_items(k, shard_size).lengths()
    )


def pointwise_serving_flops(model: HoMer, n: int, k: int) -> int:
    """Cost when every item is scored by its own invocation (encoder re-run K times)."""
    return k * count_flops(model.config, n, 1, model.schema).total


def savings_ratio(model: HoMer, n: int, k: int, shard_size: int = DEFAULT_SHARD) -> float:
    return pointwise_serving_flops(model, n, k) / serving_flops(model, n, k, shard_size)


def measured_flops(model: HoMer, params: ParamStore, request: RequestSample,
                   shard_size: int = DEFAULT_SHARD) -> int:
    """Instrumented FLOPs of one :func:`predict_request` call."""
    with flop_counter() as c:
        predict_request(model, params, request, shard_size)
    return c[0]


@dataclass
class BenchRow:
    k_bucket: str
    mode: str
    gflops_per_request: float
    p50_ms: float
    p99_ms: float
    savings_ratio: float

    def values(self) -> list:
        return [self.k_bucket, self.mode, repr(self.gflops_per_request), repr(self.p50_ms),
                repr(self.p99_ms), repr(self.savings_ratio)]


@dataclass
class BenchReport:
    rows: list[BenchRow]
    setwise_flops: int
    pointwise_flops: int
    max_shard_divergence: float

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in self.rows:
            w.writerow(r.values())
        return buf.getvalue()


def _bucket(k: int, edges: Sequence[int]) -> str:
    lo = 1
    for e in edges:
        if k <= e:
            return f"{lo}-{e}"
        lo = e + 1
    return f"{lo}+"


def bench(model: HoMer, params: ParamStore, samples: Sequence[RequestSample],
          shard_size: int = DEFAULT_SHARD, edges: Sequence[int] = (1, 4, 8, 16, 32, 300),
          divergence_shard: int | None = None) -> BenchReport:
    """Time and count both serving modes per K bucket.

    Point-wise serving is simulated by scoring each item in its own call.
    ``divergence_shard`` (default: half the largest K) re-scores every request
    with that shard size and records the largest gap to the single-shard output.
    """
    buckets: dict[str, dict[str, list]] = {}
    tot_set = tot_point = 0
    div_size = divergence_shard or max(1, max(s.n_items for s in samples) // 2)
    max_div = 0.0
    for s in samples:
        n, k = s.n_behaviors, s.n_items
        b = buckets.setdefault(_bucket(k, edges), {"set": [], "point": [], "fs": [], "fp": []})
        t0 = time.perf_counter()
        whole = predict_request(model, params, s, shard_size)
        b["set"].append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        for i in range(k):
            predict_request(model, params, s.select_items([i]), shard_size)
        b["point"].append(time.perf_counter() - t0)
        fs, fp = serving_flops(model, n, k, shard_size), pointwise_serving_flops(model, n, k)
        b["fs"].append(fs)
        b["fp"].append(fp)
        tot_set += fs
        tot_point += fp
        if k > div_size:
            split = predict_request(model, params, s, div_size)
            max_div = max(max_div, float(np.max(np.abs(split.p_clk - whole.p_clk))))
    rows = []
    for name in sorted(buckets, key=lambda x: int(x.split("-")[0].rstrip("+"))):
        b = buckets[name]
        ratio = float(np.sum(b["fp"]) / np.sum(b["fs"]))
        for mode, lat, fl in (("setwise", b["set"], b["fs"]), ("pointwise", b["point"], b["fp"])):
            ms = np.asarray(lat) * 1e3
            rows.append(BenchRow(name, mode, float(np.mean(fl)) / 1e9, float(np.percentile(ms, 50)),
                                 float(np.percentile(ms, 99)), ratio))
    return BenchReport(rows, tot_set, tot_point, max_div)
