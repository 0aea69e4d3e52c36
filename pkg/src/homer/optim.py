"""Adam with bias correction, applied slot by slot in ParamStore order."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, slot: str):
        super().__init__(f"non-finite gradient in slot {slot!r}")
        self.slot = slot


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 1e-4, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for name, arr in params.items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> tuple[ParamStore, AdamState]:
    """One Adam update. Inputs are left untouched; new params and state are returned.

    Slots missing from ``grads`` are treated as having zero gradient.
    """
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params = ParamStore(params.dtype)
    new_state = AdamState(lr=state.lr, beta1=b1, beta2=b2, eps=state.eps, t=t)
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if g is None:
            g = np.zeros_like(p)
        g = g.astype(p.dtype, copy=False)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.add(name, p - step.astype(p.dtype, copy=False))
        new_state.m[name] = m
        new_state.v[name] = v
    return new_params, new_state
