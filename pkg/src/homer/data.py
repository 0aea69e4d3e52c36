"""Request-level samples, panoramic sequences, the dataset codec and jagged batches.

One :class:`RequestSample` holds everything needed to score a request: the
user and context ids, the user's panoramic behaviour sequence and the
candidate item set with exposure/click labels. Behaviour and item columns are
stored as integer arrays (one column per schema field) so that collation is
a concatenation.

All ids are categorical; id 0 of every field is reserved as the
unknown/masked sentinel.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DOMAINS = ("user", "item", "cross", "context")
ACTIONS = {"impression": 0, "click": 1, "order": 2}
N_ACTIONS = 3
N_MAX = 512
K_MAX = 300

_ID = np.int64


# ---------------------------------------------------------------- schema


@dataclass(frozen=True)
class FieldSchema:
    field_id: int
    domain: str
    vocab_size: int


class Schema:
    """An ordered set of :class:`FieldSchema`.

    Within each domain fields are ordered by ``field_id``; that order defines
    the column layout of every id array.
    """

    def __init__(self, fields: Iterable[FieldSchema]):
        self.fields = tuple(sorted(fields, key=lambda f: f.field_id))
        ids = [f.field_id for f in self.fields]
        if len(set(ids)) != len(ids):
            raise ValueError("field ids must be unique")
        for f in self.fields:
            if f.domain not in DOMAINS:
                raise ValueError(f"field {f.field_id}: unknown domain {f.domain!r}")
            if f.vocab_size < 2:
                raise ValueError(f"field {f.field_id}: vocab_size must be >= 2")
        missing = [d for d in DOMAINS if not any(f.domain == d for f in self.fields)]
        if missing:
            raise ValueError(f"every domain needs at least one field; missing {missing}")
        self._by_domain = {d: tuple(f for f in self.fields if f.domain == d) for d in DOMAINS}

    def domain_fields(self, domain: str) -> tuple[FieldSchema, ...]:
        return self._by_domain[domain]

    def n_fields(self, domain: str) -> int:
        return len(self._by_domain[domain])

    def vocab(self, domain: str) -> np.ndarray:
        return np.array([f.vocab_size for f in self._by_domain[domain]], dtype=_ID)

    def __eq__(self, other) -> bool:
        return isinstance(other, Schema) and self.fields == other.fields

    def __hash__(self) -> int:
        return hash(self.fields)

    def __repr__(self) -> str:
        counts = ", ".join(f"{d}={self.n_fields(d)}" for d in DOMAINS)
        return f"Schema({counts})"


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class Behavior:
    item_fields: tuple[int, ...]
    cross_fields: tuple[int, ...]
    user_fields: tuple[int, ...]
    ctx_fields: tuple[int, ...]
    position: int
    action: int


@dataclass(frozen=True)
class ItemEntry:
    item_fields: tuple[int, ...]
    cross_fields: tuple[int, ...]
    y_exp: int = 0
    y_clk: int = 0


def _ids(x, cols: int) -> np.ndarray:
    return np.asarray(x, dtype=_ID).reshape(-1, cols)


@dataclass(eq=False)
class RequestSample:
    """One request: shared user/context ids, panoramic sequence (N rows), item set (K rows)."""

    request_id: int
    user_fields: np.ndarray
    ctx_fields: np.ndarray
    seq_item: np.ndarray
    seq_cross: np.ndarray
    seq_user: np.ndarray
    seq_ctx: np.ndarray
    seq_position: np.ndarray
    seq_action: np.ndarray
    item_fields: np.ndarray
    cross_fields: np.ndarray
    y_exp: np.ndarray
    y_clk: np.ndarray

    @classmethod
    def build(
        cls,
        request_id: int,
        user_fields: Sequence[int],
        ctx_fields: Sequence[int],
        behaviors: Sequence[Behavior],
        items: Sequence[ItemEntry],
        schema: Schema,
    ) -> "RequestSample":
        ni, nx, nu, nc = (schema.n_fields(d) for d in ("item", "cross", "user", "context"))
        return cls(
            request_id=int(request_id),
            user_fields=np.asarray(user_fields, dtype=_ID),
            ctx_fields=np.asarray(ctx_fields, dtype=_ID),
            seq_item=_ids([b.item_fields for b in behaviors], ni),
            seq_cross=_ids([b.cross_fields for b in behaviors], nx),
            seq_user=_ids([b.user_fields for b in behaviors], nu),
            seq_ctx=_ids([b.ctx_fields for b in behaviors], nc),
            seq_position=np.array([b.position for b in behaviors], dtype=_ID),
            seq_action=np.array([b.action for b in behaviors], dtype=_ID),
            item_fields=_ids([it.item_fields for it in items], ni),
            cross_fields=_ids([it.cross_fields for it in items], nx),
            y_exp=np.array([it.y_exp for it in items], dtype=_ID),
            y_clk=np.array([it.y_clk for it in items], dtype=_ID),
        )

    @property
    def n_behaviors(self) -> int:
        return len(self.seq_position)

    @property
    def n_items(self) -> int:
        return len(self.y_exp)

    @property
    def behaviors(self) -> list[Behavior]:
        return [
            Behavior(
                tuple(int(v) for v in self.seq_item[i]),
                tuple(int(v) for v in self.seq_cross[i]),
                tuple(int(v) for v in self.seq_user[i]),
                tuple(int(v) for v in self.seq_ctx[i]),
                int(self.seq_position[i]),
                int(self.seq_action[i]),
            )
            for i in range(self.n_behaviors)
        ]

    @property
    def items(self) -> list[ItemEntry]:
        return [
            ItemEntry(
                tuple(int(v) for v in self.item_fields[k]),
                tuple(int(v) for v in self.cross_fields[k]),
                int(self.y_exp[k]),
                int(self.y_clk[k]),
            )
            for k in range(self.n_items)
        ]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (
            self.user_fields, self.ctx_fields,
            self.seq_item, self.seq_cross, self.seq_user, self.seq_ctx,
            self.seq_position, self.seq_action,
            self.item_fields, self.cross_fields, self.y_exp, self.y_clk,
        )

    def replace(self, **changes) -> "RequestSample":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(changes)
        return RequestSample(**kw)

    def select_items(self, idx) -> "RequestSample":
        """Same request restricted to (and reordered by) item indices ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return self.replace(
            item_fields=self.item_fields[idx], cross_fields=self.cross_fields[idx],
            y_exp=self.y_exp[idx], y_clk=self.y_clk[idx],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, RequestSample) or self.request_id != other.request_id:
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.arrays(), other.arrays())
        )

    def __repr__(self) -> str:
        return f"RequestSample(id={self.request_id}, N={self.n_behaviors}, K={self.n_items})"


# ---------------------------------------------------------------- validation


def validate_request(sample: RequestSample, schema: Schema, n_max: int = N_MAX, k_max: int = K_MAX) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems: list[str] = []
    n, k = sample.n_behaviors, sample.n_items

    def check_ids(label: str, arr: np.ndarray, domain: str) -> None:
        want = schema.n_fields(domain)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, want)
        if arr.shape[1] != want:
            problems.append(f"{label}: expected {want} columns for domain {domain!r}, got {arr.shape[1]}")
            return
        vocab = schema.vocab(domain)
        for row, col in zip(*np.nonzero((arr < 0) | (arr >= vocab))):
            f = schema.domain_fields(domain)[col]
            problems.append(
                f"{label}[{row}]: field {f.field_id} id {int(arr[row, col])} outside [0, {f.vocab_size})"
            )

    check_ids("user_fields", sample.user_fields, "user")
    check_ids("ctx_fields", sample.ctx_fields, "context")
    for label, arr, domain in (
        ("behaviors.item_fields", sample.seq_item, "item"),
        ("behaviors.cross_fields", sample.seq_cross, "cross"),
        ("behaviors.user_fields", sample.seq_user, "user"),
        ("behaviors.ctx_fields", sample.seq_ctx, "context"),
        ("items.item_fields", sample.item_fields, "item"),
        ("items.cross_fields", sample.cross_fields, "cross"),
    ):
        rows = n if label.startswith("behaviors") else k
        if len(arr) != rows:
            problems.append(f"{label}: {len(arr)} rows, expected {rows}")
            continue
        check_ids(label, arr, domain)

    if n > n_max:
        problems.append(f"behaviors: {n} exceeds cap {n_max}")
    if len(sample.seq_action) != n:
        problems.append("behaviors: action column length mismatch")
    if n:
        if sample.seq_position.min() < 0:
            problems.append("behaviors: negative position")
        if np.any(np.diff(sample.seq_position) <= 0):
            problems.append("behaviors: positions not strictly increasing")
        bad = np.nonzero((sample.seq_action < 0) | (sample.seq_action >= N_ACTIONS))[0]
        for i in bad:
            problems.append(f"behaviors[{i}]: action {int(sample.seq_action[i])} not in 0..{N_ACTIONS - 1}")

    if k < 1:
        problems.append("items: a request needs at least one item")
    if k > k_max:
        problems.append(f"items: {k} exceeds cap {k_max}")
    if len(sample.y_clk) != k:
        problems.append("items: label length mismatch")
    else:
        for i in np.nonzero(~np.isin(sample.y_exp, (0, 1)))[0]:
            problems.append(f"items[{i}]: y_exp must be 0 or 1")
        for i in np.nonzero(~np.isin(sample.y_clk, (0, 1)))[0]:
            problems.append(f"items[{i}]: y_clk must be 0 or 1")
        for i in np.nonzero((sample.y_clk == 1) & (sample.y_exp != 1))[0]:
            problems.append(f"items[{i}]: clicked (y_clk=1) but not exposed (y_exp=0)")
    return problems


# ---------------------------------------------------------------- panoramic sequence


def build_panoramic_sequence(
    history: Sequence[tuple[RequestSample, int, int]],
    n_max: int = N_MAX,
    actions: Iterable[int] | None = None,
) -> list[Behavior]:
    """Turn a chronological list of ``(past request, chosen item index, action)`` into behaviours.

    Each behaviour snapshots the chosen item's item/cross ids together with
    the user/context ids of the request it came from. ``actions`` optionally
    keeps only entries whose action is in the given set. Only the most recent
    ``n_max`` entries survive and positions are renumbered from 0.
    """
    ids = [req.request_id for req, _, _ in history]
    if any(b < a for a, b in zip(ids, ids[1:])):
        raise ValueError("history must be in chronological (non-decreasing request_id) order")
    keep = None if actions is None else set(actions)
    entries = [e for e in history if keep is None or e[2] in keep]
    entries = entries[-n_max:] if n_max > 0 else []
    out = []
    for pos, (req, k, action) in enumerate(entries):
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} not in 0..{N_ACTIONS - 1}")
        out.append(
            Behavior(
                tuple(int(v) for v in req.item_fields[k]),
                tuple(int(v) for v in req.cross_fields[k]),
                tuple(int(v) for v in req.user_fields),
                tuple(int(v) for v in req.ctx_fields),
                pos,
                int(action),
            )
        )
    return out


# ---------------------------------------------------------------- side-feature masking

_SEQ_COLUMN = {"item": "seq_item", "cross": "seq_cross", "user": "seq_user", "context": "seq_ctx"}


def mask_side_features(samples: Iterable[RequestSample], domains: Iterable[str]) -> list[RequestSample]:
    """Overwrite the chosen domains of every behaviour with the sentinel id 0."""
    domains = set(domains)
    unknown = domains - set(DOMAINS)
    if unknown:
        raise ValueError(f"unknown domains {sorted(unknown)}")
    out = []
    for s in samples:
        changes = {_SEQ_COLUMN[d]: np.zeros_like(getattr(s, _SEQ_COLUMN[d])) for d in domains}
        out.append(s.replace(**changes) if changes else s)
    return out


# ---------------------------------------------------------------- binary codec

DATASET_MAGIC = b"HOMERDS1"
DATASET_VERSION = 1
_DOMAIN_CODE = {d: i for i, d in enumerate(DOMAINS)}
_HEADER_FIXED = struct.Struct("<HI")  # version, meta length
_RECORD_FIXED = struct.Struct("<qII")  # request_id, N, K


class DatasetFormatError(ValueError):
    pass


class CorruptHeaderError(DatasetFormatError):
    pass


class TruncatedRecordError(DatasetFormatError):
    pass


class SchemaMismatchError(DatasetFormatError):
    pass


def _u32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<u4").tobytes()


def _u8(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="u1").tobytes()


def encode_record(s: RequestSample) -> bytes:
    """Payload for one request, without the length prefix."""
    return b"".join((
        _RECORD_FIXED.pack(s.request_id, s.n_behaviors, s.n_items),
        _u32(s.user_fields), _u32(s.ctx_fields),
        _u32(s.seq_item), _u32(s.seq_cross), _u32(s.seq_user), _u32(s.seq_ctx),
        _u32(s.seq_position), _u8(s.seq_action),
        _u32(s.item_fields), _u32(s.cross_fields), _u8(s.y_exp), _u8(s.y_clk),
    ))


def decode_record(payload: bytes, schema: Schema) -> RequestSample:
    ni, nx, nu, nc = (schema.n_fields(d) for d in ("item", "cross", "user", "context"))
    if len(payload) < _RECORD_FIXED.size:
        raise TruncatedRecordError("record shorter than its fixed prefix")
    rid, n, k = _RECORD_FIXED.unpack_from(payload, 0)
    pos = _RECORD_FIXED.size
    expected = pos + 4 * (nu + nc) + n * (4 * (ni + nx + nu + nc) + 5) + k * (4 * (ni + nx) + 2)
    if len(payload) != expected:
        raise TruncatedRecordError(f"record {rid}: payload has {len(payload)} bytes, layout needs {expected}")

    def take(count: int, dtype: str, cols: int | None = None) -> np.ndarray:
        nonlocal pos
        width = np.dtype(dtype).itemsize
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).astype(_ID)
        pos += count * width
        return arr.reshape(-1, cols) if cols is not None else arr

    user = take(nu, "<u4")
    ctx = take(nc, "<u4")
    return RequestSample(
        request_id=rid,
        user_fields=user,
        ctx_fields=ctx,
        seq_item=take(n * ni, "<u4", ni),
        seq_cross=take(n * nx, "<u4", nx),
        seq_user=take(n * nu, "<u4", nu),
        seq_ctx=take(n * nc, "<u4", nc),
        seq_position=take(n, "<u4"),
        seq_action=take(n, "u1"),
        item_fields=take(k * ni, "<u4", ni),
        cross_fields=take(k * nx, "<u4", nx),
        y_exp=take(k, "u1"),
        y_clk=take(k, "u1"),
    )


def _header(schema: Schema, count: int, meta: str) -> bytes:
    meta_b = meta.encode()
    parts = [DATASET_MAGIC, _HEADER_FIXED.pack(DATASET_VERSION, len(meta_b)), meta_b,
             struct.pack("<H", len(schema.fields))]
    for f in schema.fields:
        parts.append(struct.pack("<HBI", f.field_id, _DOMAIN_CODE[f.domain], f.vocab_size))
    parts.append(struct.pack("<Q", count))
    return b"".join(parts)


def dataset_bytes(samples: Sequence[RequestSample], schema: Schema, meta: str = "") -> bytes:
    buf = io.BytesIO()
    buf.write(_header(schema, len(samples), meta))
    for s in samples:
        payload = encode_record(s)
        buf.write(struct.pack("<I", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def write_dataset(path, samples: Sequence[RequestSample], schema: Schema, meta: str = "") -> str:
    """Write the binary dataset; returns its sha256 hex digest."""
    data = dataset_bytes(samples, schema, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def dataset_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_header(data: bytes) -> tuple[Schema, int, str, int]:
    if len(data) < len(DATASET_MAGIC):
        raise CorruptHeaderError("file shorter than the magic bytes")
    if data[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise SchemaMismatchError("magic bytes do not identify a dataset file")
    pos = len(DATASET_MAGIC)
    try:
        version, meta_len = _HEADER_FIXED.unpack_from(data, pos)
        pos += _HEADER_FIXED.size
        if version != DATASET_VERSION:
            raise CorruptHeaderError(f"unsupported dataset version {version}")
        if pos + meta_len > len(data):
            raise CorruptHeaderError("metadata runs past end of file")
        meta = data[pos:pos + meta_len].decode()
        pos += meta_len
        (n_fields,) = struct.unpack_from("<H", data, pos)
        pos += 2
        fields = []
        codes = {v: k for k, v in _DOMAIN_CODE.items()}
        for _ in range(n_fields):
            fid, code, vocab = struct.unpack_from("<HBI", data, pos)
            pos += 7
            if code not in codes:
                raise CorruptHeaderError(f"field {fid}: bad domain code {code}")
            fields.append(FieldSchema(fid, codes[code], vocab))
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
    except struct.error as exc:
        raise CorruptHeaderError(f"header truncated: {exc}") from None
    except UnicodeDecodeError as exc:
        raise CorruptHeaderError(f"metadata is not utf-8: {exc}") from None
    try:
        schema = Schema(fields)
    except ValueError as exc:
        raise CorruptHeaderError(f"invalid schema table: {exc}") from None
    return schema, count, meta, pos


def read_dataset(path, schema: Schema | None = None, with_meta: bool = False):
    """Read a dataset file; returns ``(schema, samples)`` (plus ``meta`` if asked).

    Raises :class:`SchemaMismatchError` on a foreign file or when ``schema`` is
    given and differs from the stored one, :class:`CorruptHeaderError` on an
    unreadable header and :class:`TruncatedRecordError` on a short record.
    """
    data = Path(path).read_bytes()
    stored, count, meta, pos = _parse_header(data)
    if schema is not None and schema != stored:
        raise SchemaMismatchError("stored schema differs from the expected one")
    samples = []
    for i in range(count):
        if pos + 4 > len(data):
            raise TruncatedRecordError(f"record {i}: missing length prefix")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise TruncatedRecordError(f"record {i}: needs {length} bytes, {len(data) - pos} left")
        samples.append(decode_record(data[pos:pos + length], stored))
        pos += length
    if pos != len(data):
        raise TruncatedRecordError(f"{len(data) - pos} trailing bytes after {count} records")
    return (stored, samples, meta) if with_meta else (stored, samples)


def serialized_size(samples: Iterable[RequestSample]) -> int:
    """Bytes the records occupy in a dataset file (length prefixes included, header excluded)."""
    return sum(4 + len(encode_record(s)) for s in samples)


# ---------------------------------------------------------------- point-wise expansion


def expand_to_pointwise(samples: Sequence[RequestSample]) -> tuple[list[RequestSample], float]:
    """One single-item record per exposed item, each carrying a full copy of the shared features.

    Returns the records and the ratio of their serialized size to the
    set-wise serialized size.
    """
    out = []
    for s in samples:
        for k in np.nonzero(s.y_exp == 1)[0]:
            out.append(s.select_items([k]))
    setwise = serialized_size(samples)
    ratio = serialized_size(out) / setwise if setwise else float("nan")
    return out, ratio


# ---------------------------------------------------------------- jagged batches


@dataclass(eq=False)
class JaggedBatch:
    """Concatenated requests; segment ``b`` spans ``offsets[b]:offsets[b+1]``."""

    request_ids: np.ndarray
    user_fields: np.ndarray
    ctx_fields: np.ndarray
    seq_offsets: np.ndarray
    seq_item: np.ndarray
    seq_cross: np.ndarray
    seq_user: np.ndarray
    seq_ctx: np.ndarray
    seq_position: np.ndarray
    seq_action: np.ndarray
    item_offsets: np.ndarray
    item_fields: np.ndarray
    cross_fields: np.ndarray
    y_exp: np.ndarray
    y_clk: np.ndarray

    @property
    def size(self) -> int:
        return len(self.request_ids)

    @property
    def seq_lengths(self) -> np.ndarray:
        return np.diff(self.seq_offsets)

    @property
    def item_lengths(self) -> np.ndarray:
        return np.diff(self.item_offsets)

    def check(self) -> None:
        for name, off, total in (
            ("seq_offsets", self.seq_offsets, len(self.seq_position)),
            ("item_offsets", self.item_offsets, len(self.y_exp)),
        ):
            if len(off) != self.size + 1 or off[0] != 0 or np.any(np.diff(off) < 0) or off[-1] != total:
                raise ValueError(f"{name} inconsistent with {total} flattened rows")


def _offsets(lengths) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(lengths, dtype=np.int64)]).astype(np.int64)


def make_batch(samples: Sequence[RequestSample]) -> JaggedBatch:
    if not samples:
        raise ValueError("cannot batch zero requests")
    cat = np.concatenate
    return JaggedBatch(
        request_ids=np.array([s.request_id for s in samples], dtype=_ID),
        user_fields=np.stack([s.user_fields for s in samples]),
        ctx_fields=np.stack([s.ctx_fields for s in samples]),
        seq_offsets=_offsets([s.n_behaviors for s in samples]),
        seq_item=cat([s.seq_item for s in samples]),
        seq_cross=cat([s.seq_cross for s in samples]),
        seq_user=cat([s.seq_user for s in samples]),
        seq_ctx=cat([s.seq_ctx for s in samples]),
        seq_position=cat([s.seq_position for s in samples]),
        seq_action=cat([s.seq_action for s in samples]),
        item_offsets=_offsets([s.n_items for s in samples]),
        item_fields=cat([s.item_fields for s in samples]),
        cross_fields=cat([s.cross_fields for s in samples]),
        y_exp=cat([s.y_exp for s in samples]),
        y_clk=cat([s.y_clk for s in samples]),
    )


def collate(samples: Sequence[RequestSample], batch_size: int) -> list[JaggedBatch]:
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    return [make_batch(samples[i:i + batch_size]) for i in range(0, len(samples), batch_size)]


def decollate(batch: JaggedBatch) -> list[RequestSample]:
    out = []
    so, io_ = batch.seq_offsets, batch.item_offsets
    for b in range(batch.size):
        s = slice(so[b], so[b + 1])
        it = slice(io_[b], io_[b + 1])
        out.append(RequestSample(
            request_id=int(batch.request_ids[b]),
            user_fields=batch.user_fields[b].copy(),
            ctx_fields=batch.ctx_fields[b].copy(),
            seq_item=batch.seq_item[s].copy(),
            seq_cross=batch.seq_cross[s].copy(),
            seq_user=batch.seq_user[s].copy(),
            seq_ctx=batch.seq_ctx[s].copy(),
            seq_position=batch.seq_position[s].copy(),
            seq_action=batch.seq_action[s].copy(),
            item_fields=batch.item_fields[it].copy(),
            cross_fields=batch.cross_fields[it].copy(),
            y_exp=batch.y_exp[it].copy(),
            y_clk=batch.y_clk[it].copy(),
        ))
    return out
