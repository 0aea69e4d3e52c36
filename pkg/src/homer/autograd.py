"""Tiny reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers the closure that pushes its
gradient to its parents. Ops live in :mod:`homer.ops`; this module only holds
the graph machinery plus two global switches:

* gradient recording (``no_grad``) so evaluation does not build graphs;
* row-stable reductions (``row_stable``), which route forward matmuls through
  ``np.einsum``. BLAS kernels pick different blocking for different row
  counts, so the same row can come out with different low bits depending on
  what it was batched with. ``einsum`` without ``optimize`` accumulates each
  output element in a fixed order, which makes every row a pure function of
  its own inputs.

A FLOP counter (``count_flops``) is also kept here so that ops can report the
arithmetic they actually executed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_GRAD_ENABLED = True
_ROW_STABLE = False
_FLOP_COUNTER: list[int] | None = None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def row_stable(enabled: bool = True) -> Iterator[None]:
    """Make every forward matmul row-independent (bitwise)."""
    global _ROW_STABLE
    prev = _ROW_STABLE
    _ROW_STABLE = enabled
    try:
        yield
    finally:
        _ROW_STABLE = prev


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _ROW_STABLE:
        return np.einsum("ik,kj->ij", a, b)
    return a @ b


@contextlib.contextmanager
def count_flops() -> Iterator[list[int]]:
    """Collect FLOPs reported by ops; yields a one-element list holding the total."""
    global _FLOP_COUNTER
    prev = _FLOP_COUNTER
    counter = [0]
    _FLOP_COUNTER = counter
    try:
        yield counter
    finally:
        _FLOP_COUNTER = prev
        if prev is not None:
            prev[0] += counter[0]


def add_flops(n: int) -> None:
    if _FLOP_COUNTER is not None:
        _FLOP_COUNTER[0] += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{label})"

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; records the graph edge only when some parent needs grads."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order
