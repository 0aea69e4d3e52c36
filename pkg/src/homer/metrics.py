"""Offline metrics and the probability-space losses."""

from __future__ import annotations

import numpy as np

PROB_CLAMP = 1e-7


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC via average ranks: (concordant + tied / 2) / (P * N).

    Returns ``None`` when only one class is present.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # average 1-based rank for each run of tied scores
    starts = np.concatenate([[True], sorted_s[1:] != sorted_s[:-1]])
    run_id = np.cumsum(starts) - 1
    run_start = np.nonzero(starts)[0]
    run_end = np.concatenate([run_start[1:], [len(s)]])
    avg_rank = (run_start + run_end + 1) / 2.0
    ranks = np.empty(len(s))
    ranks[order] = avg_rank[run_id]
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _bce(p, y, clamp: float) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), clamp, 1.0 - clamp)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def logloss(scores, labels, clamp: float = PROB_CLAMP) -> float:
    scores = np.asarray(scores).reshape(-1)
    if scores.size == 0:
        return 0.0
    return float(_bce(scores, np.asarray(labels).reshape(-1), clamp).mean())


def clk_loss(p_clk, y_clk, y_exp, clamp: float = PROB_CLAMP) -> float:
    """Mean cross-entropy over exposed items only; 0 when nothing is exposed."""
    mask = np.asarray(y_exp).reshape(-1) == 1
    if not mask.any():
        return 0.0
    p = np.asarray(p_clk).reshape(-1)[mask]
    y = np.asarray(y_clk).reshape(-1)[mask]
    return float(_bce(p, y, clamp).mean())


def imp_loss(p_exp, y_exp, clamp: float = PROB_CLAMP) -> float:
    """Mean cross-entropy of the exposure head over every candidate item."""
    return logloss(p_exp, y_exp, clamp)


def total_loss(l_clk: float, l_imp: float, lam: float = 1.0, variant: str = "full") -> float:
    """``l_clk + lam * l_imp``; variants trained without the impression loss drop the second term."""
    if variant in ("pointwise", "no_imp_loss"):
        return l_clk
    return l_clk + lam * l_imp
