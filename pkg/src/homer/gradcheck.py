"""Central-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, no_grad
from .params import ParamStore

LossFn = Callable[[dict[str, Tensor]], Tensor]


def analytic_grads(loss_fn: LossFn, params: ParamStore) -> tuple[float, dict[str, np.ndarray]]:
    leaves = params.tensors()
    loss = loss_fn(leaves)
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    loss.backward()
    grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in leaves.items()}
    return value, grads


def grad_check(
    loss_fn: LossFn,
    params: ParamStore,
    h: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a dict of leaf tensors (one per slot) to a scalar tensor.
    ``params`` should be float64. Up to ``n_coords`` distinct scalar
    coordinates are drawn uniformly from the flattened store (all of them when
    the store is smaller). The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps coordinates whose true
    gradient is ~0 from turning round-off into a huge ratio.
    """
    total = params.size
    if total == 0:
        return 0.0
    _, grads = analytic_grads(loss_fn, params)
    rng = np.random.default_rng(seed)
    coords = np.arange(total) if total <= n_coords else rng.choice(total, size=n_coords, replace=False)
    work = params.copy()
    worst = 0.0
    with no_grad():
        for k in coords:
            name, idx = work.flat_index(int(k))
            arr = work[name]
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus = float(loss_fn(work.tensors()).data)
            arr[idx] = orig - h
            f_minus = float(loss_fn(work.tensors()).data)
            arr[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}{idx}")
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(grads[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
