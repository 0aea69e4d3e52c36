"""Differentiable kernels used by the model.

Every op takes and returns :class:`~homer.autograd.Tensor` objects and
defines its own backward closure. Shapes are 2-D (rows x features) unless
noted. Jagged inputs are described by an ``offsets`` array of length B+1.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .autograd import Tensor, add_flops, make_node, matmul

# FLOPs charged per element for the non-matmul ops.
SIGMOID_FLOPS = 4
SILU_FLOPS = 5
LAYER_NORM_FLOPS = 8

SCALE_MODES = ("sqrt_d", "none")


def _sig(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def _silu_grad(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (1.0 + x * (1.0 - s))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    add_flops(a.data.size)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return make_node(a.data + b.data, (a, b), backward)


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` with ``b`` broadcast over rows."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ValueError(f"affine: incompatible shapes {x.shape} @ {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ValueError(f"affine: bias shape {b.shape} does not match {W.shape[1]} outputs")
    n, d_in = x.shape
    d_out = W.shape[1]
    add_flops(2 * n * d_in * d_out + (n * d_out if b is not None else 0))
    out = matmul(x.data, W.data)
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ W.data.T)
        if W.requires_grad:
            W.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return make_node(out, parents, backward)


def silu(x: Tensor) -> Tensor:
    add_flops(SILU_FLOPS * x.data.size)
    s = _sig(x.data)

    def backward(g):
        x.accumulate(g * _silu_grad(x.data, s))

    return make_node(x.data * s, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    add_flops(SIGMOID_FLOPS * x.data.size)
    s = _sig(x.data)

    def backward(g):
        x.accumulate(g * s * (1.0 - s))

    return make_node(s, (x,), backward)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalisation with biased variance."""
    n, d = x.shape
    add_flops(LAYER_NORM_FLOPS * n * d)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * scale.data + shift.data

    def backward(g):
        if scale.requires_grad:
            scale.accumulate((g * xhat).sum(axis=0))
        if shift.requires_grad:
            shift.accumulate(g.sum(axis=0))
        if x.requires_grad:
            gx = g * scale.data
            dx = rstd * (gx - gx.mean(axis=1, keepdims=True)
                         - xhat * (gx * xhat).mean(axis=1, keepdims=True))
            x.accumulate(dx)

    return make_node(out, (x, scale, shift), backward)


def score_scale(d_head: int, scale_mode: str) -> float:
    if scale_mode == "sqrt_d":
        return 1.0 / math.sqrt(d_head)
    if scale_mode == "none":
        return 1.0
    raise ValueError(f"unknown scale_mode {scale_mode!r}; expected one of {SCALE_MODES}")


def segment_attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    q_offsets: np.ndarray,
    k_offsets: np.ndarray,
    scale_mode: str = "sqrt_d",
    heads: int = 1,
) -> Tensor:
    """SiLU attention applied independently to each jagged segment.

    For segment ``b`` the queries ``Q[q_offsets[b]:q_offsets[b+1]]`` attend to
    keys/values ``K, V[k_offsets[b]:k_offsets[b+1]]``; nothing crosses segment
    boundaries and no padding rows are materialised. Per head,
    ``out = silu(c * Q K^T) V`` with ``c`` set by ``scale_mode``.
    """
    d = Q.shape[1]
    if K.shape[1] != d or V.shape[1] != d:
        raise ValueError(f"attention: feature dims differ {Q.shape}, {K.shape}, {V.shape}")
    if K.shape[0] != V.shape[0]:
        raise ValueError("attention: keys and values must have the same row count")
    if d % heads:
        raise ValueError(f"attention: d={d} not divisible by heads={heads}")
    q_offsets = np.asarray(q_offsets)
    k_offsets = np.asarray(k_offsets)
    if len(q_offsets) != len(k_offsets):
        raise ValueError("attention: query and key offsets describe different batch sizes")
    dh = d // heads
    c = score_scale(dh, scale_mode)
    out = np.zeros_like(Q.data)
    cache = []
    flops = 0
    for b in range(len(q_offsets) - 1):
        q0, q1 = int(q_offsets[b]), int(q_offsets[b + 1])
        k0, k1 = int(k_offsets[b]), int(k_offsets[b + 1])
        nq, nk = q1 - q0, k1 - k0
        if nq == 0:
            continue
        if nk == 0:
            raise ValueError(f"attention: segment {b} has queries but an empty key set")
        for h in range(heads):
            cols = slice(h * dh, (h + 1) * dh)
            qs = Q.data[q0:q1, cols]
            ks = K.data[k0:k1, cols]
            vs = V.data[k0:k1, cols]
            S = matmul(qs, ks.T)
            if c != 1.0:
                S = S * c
            s = _sig(S)
            A = S * s
            out[q0:q1, cols] = matmul(A, vs)
            cache.append((q0, q1, k0, k1, cols, S, s, A))
        flops += heads * nq * nk * (4 * dh + SILU_FLOPS + (1 if c != 1.0 else 0))
    add_flops(flops)

    def backward(g):
        gQ = np.zeros_like(Q.data) if Q.requires_grad else None
        gK = np.zeros_like(K.data) if K.requires_grad else None
        gV = np.zeros_like(V.data) if V.requires_grad else None
        for q0, q1, k0, k1, cols, S, s, A in cache:
            go = g[q0:q1, cols]
            if gV is not None:
                gV[k0:k1, cols] += A.T @ go
            dA = go @ V.data[k0:k1, cols].T
            dS = dA * _silu_grad(S, s)
            if c != 1.0:
                dS = dS * c
            if gQ is not None:
                gQ[q0:q1, cols] += dS @ K.data[k0:k1, cols]
            if gK is not None:
                gK[k0:k1, cols] += dS.T @ Q.data[q0:q1, cols]
        if gQ is not None:
            Q.accumulate(gQ)
        if gK is not None:
            K.accumulate(gK)
        if gV is not None:
            V.accumulate(gV)

    return make_node(out, (Q, K, V), backward)


def attention_core(Q: Tensor, K: Tensor, V: Tensor, scale_mode: str = "sqrt_d", heads: int = 1) -> Tensor:
    """Single-segment ``silu(c * Q K^T) V``."""
    if K.shape[0] == 0:
        raise ValueError("attention: empty key set")
    return segment_attention(
        Q, K, V, np.array([0, Q.shape[0]]), np.array([0, K.shape[0]]), scale_mode, heads
    )


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows ``table[ids]``; the backward scatter-adds, so repeated ids accumulate."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise IndexError(f"embedding id {bad} out of range for table with {vocab} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        table.accumulate(gt)

    return make_node(table.data[ids], (table,), backward)


take_rows = embedding_gather


def concat_cols(xs: Sequence[Tensor]) -> Tensor:
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ {sorted(rows)}")
    widths = [x.shape[1] for x in xs]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        for x, a, b in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                x.accumulate(g[:, a:b])

    return make_node(np.concatenate([x.data for x in xs], axis=1), tuple(xs), backward)


def concat_rows(xs: Sequence[Tensor]) -> Tensor:
    cols = {x.shape[1] for x in xs}
    if len(cols) != 1:
        raise ValueError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [x.shape[0] for x in xs])

    def backward(g):
        for x, a, b in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                x.accumulate(g[a:b])

    return make_node(np.concatenate([x.data for x in xs], axis=0), tuple(xs), backward)


def mean_reduce(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        x.accumulate(np.full_like(x.data, g / n))

    return make_node(np.asarray(x.data.mean()), (x,), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g):
        x.accumulate(g * factor)

    return make_node(x.data * factor, (x,), backward)


def bce_with_logits(logits: Tensor, labels: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy computed from logits over the rows selected by ``mask``.

    ``logits`` is an (n, 1) or (n,) tensor. Returns a scalar; an empty
    selection gives exactly 0 with zero gradient.
    """
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=z.dtype).reshape(-1)
    m = np.ones_like(z) if mask is None else np.asarray(mask, dtype=z.dtype).reshape(-1)
    count = float(m.sum())
    if count == 0:
        return make_node(np.zeros((), dtype=z.dtype), (logits,), lambda g: None)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = (per * m).sum() / count

    def backward(g):
        logits.accumulate((g * m * (_sig(z) - y) / count).reshape(logits.shape))

    return make_node(np.asarray(loss, dtype=z.dtype), (logits,), backward)
