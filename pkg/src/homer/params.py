"""Named parameter storage, seeded initialisation and checkpoint files."""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .autograd import Tensor

CHECKPOINT_MAGIC = b"HOMERCKP"
CHECKPOINT_VERSION = 1
INIT_STD = 0.02


class CheckpointError(ValueError):
    pass


def slot_rng(seed: int, name: str) -> np.random.Generator:
    """Generator seeded from ``(seed, name)`` so a slot's init never depends on slot order."""
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class ParamStore:
    """Ordered mapping ``slot name -> ndarray``.

    Iteration order is insertion order, which the model keeps fixed, so the
    optimizer, gradient checker and checkpoint writer all walk slots the same
    way on every run. ``flat_index`` addresses individual scalars across the
    whole store.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._slots: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._slots:
            raise KeyError(f"duplicate parameter slot {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self._slots[name] = arr
        return arr

    def init_slot(self, name: str, shape, kind: str, seed: int) -> np.ndarray:
        if kind in ("weight", "embedding"):
            value = truncated_normal(slot_rng(seed, name), shape)
        elif kind in ("bias", "shift"):
            value = np.zeros(shape)
        elif kind == "scale":
            value = np.ones(shape)
        else:
            raise ValueError(f"unknown init kind {kind!r}")
        return self.add(name, value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._slots[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._slots:
            raise KeyError(name)
        if np.shape(value) != self._slots[name].shape:
            raise ValueError(f"slot {name!r}: shape {np.shape(value)} != {self._slots[name].shape}")
        self._slots[name] = np.array(value, dtype=self.dtype)

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __iter__(self) -> Iterator[str]:
        return iter(self._slots)

    def __len__(self) -> int:
        return len(self._slots)

    def items(self):
        return self._slots.items()

    def names(self) -> list[str]:
        return list(self._slots)

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self._slots.values()))

    def flat_index(self, k: int) -> tuple[str, tuple[int, ...]]:
        for name, arr in self._slots.items():
            if k < arr.size:
                return name, np.unravel_index(k, arr.shape)
            k -= arr.size
        raise IndexError("flat index beyond parameter count")

    def tensors(self) -> dict[str, Tensor]:
        """Leaf tensors viewing the stored arrays, ready for a backward pass."""
        return {n: Tensor(a, requires_grad=True, name=n) for n, a in self._slots.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for n, a in self._slots.items():
            out._slots[n] = a.copy()
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for n, a in self._slots.items():
            out.add(n, a)
        return out

    def bitwise_equal(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self._slots.values(), other._slots.values())
        )


def checkpoint_bytes(params: ParamStore, meta: str = "") -> bytes:
    buf = io.BytesIO()
    meta_b = meta.encode()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(meta_b)))
    buf.write(meta_b)
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path, params: ParamStore, meta: str = "") -> None:
    Path(path).write_bytes(checkpoint_bytes(params, meta))


def load_checkpoint(path, dtype=np.float32) -> tuple[ParamStore, str]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("checkpoint truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = bytes(take(meta_len)).decode()
    (n_slots,) = struct.unpack("<I", take(4))
    params = ParamStore(dtype)
    for _ in range(n_slots):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        params.add(name, arr)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last slot")
    return params, meta
