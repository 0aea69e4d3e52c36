"""One-epoch training with the click + impression objective, and held-out evaluation."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import ops
from .autograd import Tensor
from .data import JaggedBatch, RequestSample, Schema, collate
from .metrics import auc, logloss
from .model import HoMer, ModelConfig
from .optim import AdamState, adam_step
from .params import ParamStore

log = logging.getLogger(__name__)

DEFAULT_LR = 1e-4
DEFAULT_LAMBDA = 1.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = DEFAULT_LR
    lam: float = DEFAULT_LAMBDA
    batch_size: int = 32
    seed: int = 0
    holdout_frac: float = 0.1
    eval_batch_size: int = 256
    epochs: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.epochs != 1:
            raise ValueError("training is single-epoch by design")
        if not 0 <= self.holdout_frac < 1:
            raise ValueError("holdout_frac must be in [0, 1)")


@dataclass
class EvalReport:
    auc_clk: float | None
    auc_exp: float | None
    logloss_clk: float
    logloss_exp: float
    n_requests: int
    n_items: int
    n_exposed: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepLog:
    step: int
    l_clk: float
    l_imp: float
    total: float


@dataclass
class TrainResult:
    params: ParamStore
    log: list[StepLog]
    report: EvalReport | None
    model: HoMer = field(repr=False)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


def split_holdout(samples: Sequence[RequestSample], frac: float) -> tuple[list[RequestSample], list[RequestSample]]:
    """Last ``frac`` of requests (generation order) form the held-out split."""
    n_test = int(round(len(samples) * frac))
    cut = len(samples) - n_test
    return list(samples[:cut]), list(samples[cut:])


def batch_losses(model: HoMer, batch: JaggedBatch, P: dict[str, Tensor], lam: float) -> tuple[Tensor, Tensor, Tensor]:
    """(click loss, impression loss, total) as differentiable scalars.

    Both losses are batch means (exposed items for clicks, every item for
    impressions) computed in logit space.
    """
    z_exp, z_clk = model.logits(batch, P)
    l_clk = ops.bce_with_logits(z_clk, batch.y_clk, mask=batch.y_exp)
    l_imp = ops.bce_with_logits(z_exp, batch.y_exp)
    lam = lam if model.config.imp_loss else 0.0
    total = ops.add(l_clk, ops.scale(l_imp, lam)) if lam else l_clk
    return l_clk, l_imp, total


def train_one_epoch(
    samples: Sequence[RequestSample],
    schema: Schema,
    model_config: ModelConfig,
    train_config: TrainConfig = TrainConfig(),
    eval_samples: Sequence[RequestSample] | None = None,
    params: ParamStore | None = None,
) -> TrainResult:
    """Shuffle once, visit every training request exactly once, Adam step per batch.

    With ``eval_samples=None`` the last ``holdout_frac`` of ``samples`` is held
    out and reported on; pass an explicit list to evaluate elsewhere.
    """
    if not samples:
        raise ValueError("empty dataset")
    if eval_samples is None:
        train, held = split_holdout(samples, train_config.holdout_frac)
    else:
        train, held = list(samples), list(eval_samples)
    model = HoMer(model_config, schema)
    params = model.init_params() if params is None else params
    state = AdamState.for_params(params, lr=train_config.lr)
    order = np.random.default_rng(train_config.seed).permutation(len(train))
    shuffled = [train[i] for i in order]
    steps: list[StepLog] = []
    for step, batch in enumerate(collate(shuffled, train_config.batch_size)):
        P = params.tensors()
        l_clk, l_imp, total = batch_losses(model, batch, P, train_config.lam)
        value = float(total.data)
        if not np.isfinite(value):
            raise NonFiniteLossError(step, value)
        total.backward()
        grads = {n: t.grad for n, t in P.items() if t.grad is not None}
        params, state = adam_step(params, grads, state)
        steps.append(StepLog(step, float(l_clk.data), float(l_imp.data), value))
        if step % 100 == 0:
            log.debug("step %d loss %.5f", step, value)
    report = evaluate(model, params, held, train_config.eval_batch_size) if held else None
    return TrainResult(params, steps, report, model)


def predict_all(model: HoMer, params: ParamStore, samples: Sequence[RequestSample], batch_size: int = 256):
    p_exp, p_clk = [], []
    for batch in collate(list(samples), batch_size):
        out = model.forward(batch, params)
        p_exp.append(out.p_exp)
        p_clk.append(out.p_clk)
    return np.concatenate(p_exp), np.concatenate(p_clk)


def evaluate(model: HoMer, params: ParamStore, samples: Sequence[RequestSample], batch_size: int = 256) -> EvalReport:
    p_exp, p_clk = predict_all(model, params, samples, batch_size)
    y_exp = np.concatenate([s.y_exp for s in samples])
    y_clk = np.concatenate([s.y_clk for s in samples])
    exposed = y_exp == 1
    return EvalReport(
        auc_clk=auc(p_clk[exposed], y_clk[exposed]),
        auc_exp=auc(p_exp, y_exp),
        logloss_clk=logloss(p_clk[exposed], y_clk[exposed]),
        logloss_exp=logloss(p_exp, y_exp),
        n_requests=len(samples),
        n_items=int(len(y_exp)),
        n_exposed=int(exposed.sum()),
    )


def metrics_csv(steps: Sequence[StepLog], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "l_clk", "l_imp", "total"])
    for s in steps:
        w.writerow([s.step, repr(s.l_clk), repr(s.l_imp), repr(s.total)])
    return buf.getvalue()
