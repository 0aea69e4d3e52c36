"""The HoMer encoder-decoder over jagged request batches.

Data flow for one batch::

    behaviours --tokenize--> E0 --L encoder blocks--> E^L (memory)
    user/ctx   --tokenize--> H ----------------+
    items      --tokenize--> item tokens + H --> D0 --M decoder blocks--> D^M --> two MLP heads

Every decoder block runs a cross-item stage (self-attention among the
request's own items) and a user-item stage (items query the request's
memory). Attention everywhere is ``silu(Q K^T) V`` on SiLU-activated
projections, restricted to the request's own segment.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ops
from .autograd import Tensor, no_grad
from .data import N_ACTIONS, N_MAX, JaggedBatch, Schema
from .params import ParamStore

VARIANTS = ("full", "pointwise", "no_imp_loss", "no_cross_item")


@dataclass(frozen=True)
class ModelConfig:
    L: int = 1
    M: int = 1
    d_embed: int = 8
    d_token: int = 16
    heads: int = 1
    eps: float = 1e-5
    scale_mode: str = "sqrt_d"
    variant: str = "full"
    seed: int = 0
    n_max: int = N_MAX
    dtype: str = "float32"

    def __post_init__(self):
        if self.L < 0 or self.M < 1 or self.d_token < 1 or self.d_embed < 1:
            raise ValueError("need L >= 0, M >= 1, d_token >= 1, d_embed >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.d_token % self.heads:
            raise ValueError("d_token must be divisible by heads")
        if self.scale_mode not in ops.SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {ops.SCALE_MODES}")

    @property
    def cross_item(self) -> bool:
        return self.variant in ("full", "no_imp_loss")

    @property
    def imp_loss(self) -> bool:
        return self.variant in ("full", "no_cross_item")

    @property
    def hidden(self) -> int:
        return max(1, self.d_token // 2)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardOutput:
    """Per-item probabilities laid out like the batch's item offsets."""

    p_exp: np.ndarray
    p_clk: np.ndarray
    item_offsets: np.ndarray

    def split(self) -> list[tuple[np.ndarray, np.ndarray]]:
        o = self.item_offsets
        return [(self.p_exp[o[b]:o[b + 1]], self.p_clk[o[b]:o[b + 1]]) for b in range(len(o) - 1)]


@dataclass
class Memory:
    """Encoder output as seen by the decoder: one or more rows per request plus offsets."""

    rows: Tensor
    offsets: np.ndarray
    kv: list[tuple[Tensor, Tensor]] = field(default_factory=list)


@dataclass
class FlopBreakdown:
    encoder: int = 0
    memory: int = 0
    context: int = 0
    item_tokens: int = 0
    cross_item: int = 0
    user_item: int = 0
    head: int = 0

    @property
    def shared(self) -> int:
        """Cost that does not depend on the number of items."""
        return self.encoder + self.memory + self.context

    @property
    def total(self) -> int:
        return (self.encoder + self.memory + self.context + self.item_tokens
                + self.cross_item + self.user_item + self.head)


def _segment_ids(offsets: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


class HoMer:
    """Model definition bound to a config and a feature schema.

    Parameters live outside the model in a :class:`ParamStore`; methods that
    compute take a dict of tensors ``P`` (``params.tensors()``) so the same code
    serves training, gradient checking and inference.
    """

    def __init__(self, config: ModelConfig, schema: Schema):
        self.config = config
        self.schema = schema

    # ------------------------------------------------------------ parameters

    def param_shapes(self) -> list[tuple[str, tuple[int, ...], str]]:
        c, s = self.config, self.schema
        de, d, h = c.d_embed, c.d_token, c.hidden
        shapes: list[tuple[str, tuple[int, ...], str]] = []

        def lin(name, d_in, d_out):
            shapes.append((f"{name}.W", (d_in, d_out), "weight"))
            shapes.append((f"{name}.b", (d_out,), "bias"))

        def block(prefix):
            for proj in ("q", "k", "v", "o"):
                lin(f"{prefix}.{proj}", d, d)
            shapes.append((f"{prefix}.ln.scale", (d,), "scale"))
            shapes.append((f"{prefix}.ln.shift", (d,), "shift"))

        for f in s.fields:
            shapes.append((f"emb.{f.field_id}", (f.vocab_size, de), "embedding"))
        shapes.append(("emb.position", (c.n_max + 1, de), "embedding"))
        shapes.append(("emb.action", (N_ACTIONS, de), "embedding"))
        lin("tok.seq", len(s.fields) * de, d)
        lin("tok.pos", de, d)
        lin("tok.act", de, d)
        shapes.append(("null_behavior", (1, d), "weight"))
        for l in range(c.L):
            block(f"enc.{l}")
        lin("tok.user", (s.n_fields("user") + s.n_fields("context")) * de, d)
        lin("tok.item", (s.n_fields("item") + s.n_fields("cross")) * de, d)
        for m in range(c.M):
            if c.cross_item:
                block(f"dec.{m}.cross")
            block(f"dec.{m}.user")
        for head in ("exp", "clk"):
            lin(f"head.{head}.0", d, h)
            lin(f"head.{head}.1", h, 1)
        return shapes

    def init_params(self, seed: int | None = None, dtype=None) -> ParamStore:
        seed = self.config.seed if seed is None else seed
        store = ParamStore(dtype or self.config.dtype)
        for name, shape, kind in self.param_shapes():
            store.init_slot(name, shape, kind, seed)
        return store

    # ------------------------------------------------------------ encoder

    def _embed_fields(self, P, columns: list[tuple[str, np.ndarray]]) -> Tensor:
        parts = []
        for domain, ids in columns:
            for j, f in enumerate(self.schema.domain_fields(domain)):
                parts.append(ops.embedding_gather(P[f"emb.{f.field_id}"], ids[:, j]))
        return ops.concat_cols(parts)

    def tokenize_behaviors(self, batch: JaggedBatch, P) -> Tensor:
        """E0 = tok_seq(all side-feature embeddings) + tok_pos(position) + tok_act(action)."""
        feats = self._embed_fields(P, [
            ("user", batch.seq_user), ("item", batch.seq_item),
            ("cross", batch.seq_cross), ("context", batch.seq_ctx),
        ])
        pos = np.minimum(batch.seq_position, self.config.n_max)
        e = ops.affine(feats, P["tok.seq.W"], P["tok.seq.b"])
        e = ops.add(e, ops.affine(ops.embedding_gather(P["emb.position"], pos), P["tok.pos.W"], P["tok.pos.b"]))
        e = ops.add(e, ops.affine(ops.embedding_gather(P["emb.action"], batch.seq_action), P["tok.act.W"], P["tok.act.b"]))
        return e

    def _attention_block(self, prefix: str, P, x: Tensor, x_offsets, mem: Tensor | None = None,
                         mem_offsets=None, kv: tuple[Tensor, Tensor] | None = None) -> Tensor:
        """LN(W_o . silu(silu(Q) silu(K)^T) silu(V) + x); self-attention unless memory/kv given."""
        c = self.config
        q = ops.silu(ops.affine(x, P[f"{prefix}.q.W"], P[f"{prefix}.q.b"]))
        if kv is None:
            src = x if mem is None else mem
            kv = self.key_values(prefix, P, src)
        k_off = x_offsets if mem_offsets is None else mem_offsets
        a = ops.segment_attention(q, kv[0], kv[1], x_offsets, k_off, c.scale_mode, c.heads)
        out = ops.add(ops.affine(a, P[f"{prefix}.o.W"], P[f"{prefix}.o.b"]), x)
        return ops.layer_norm(out, P[f"{prefix}.ln.scale"], P[f"{prefix}.ln.shift"], c.eps)

    def key_values(self, prefix: str, P, src: Tensor) -> tuple[Tensor, Tensor]:
        k = ops.silu(ops.affine(src, P[f"{prefix}.k.W"], P[f"{prefix}.k.b"]))
        v = ops.silu(ops.affine(src, P[f"{prefix}.v.W"], P[f"{prefix}.v.b"]))
        return k, v

    def encoder_block(self, E: Tensor, P, l: int, seq_offsets: np.ndarray) -> Tensor:
        return self._attention_block(f"enc.{l}", P, E, seq_offsets)

    def encode(self, batch: JaggedBatch, P) -> Memory:
        """Run the encoder stack; requests with no behaviours get the learned null row."""
        E = self.tokenize_behaviors(batch, P)
        for l in range(self.config.L):
            E = self.encoder_block(E, P, l, batch.seq_offsets)
        lengths = batch.seq_lengths
        if np.all(lengths > 0):
            return Memory(E, batch.seq_offsets)
        null_row = E.shape[0]
        index = np.concatenate([
            np.arange(batch.seq_offsets[b], batch.seq_offsets[b + 1]) if n else np.array([null_row])
            for b, n in enumerate(lengths)
        ]).astype(np.int64)
        rows = ops.take_rows(ops.concat_rows([E, P["null_behavior"]]), index)
        offsets = np.concatenate([[0], np.cumsum(np.maximum(lengths, 1))]).astype(np.int64)
        return Memory(rows, offsets)

    def project_memory(self, memory: Memory, P) -> Memory:
        """Attach per-block user-item keys/values; they depend only on the memory rows."""
        memory.kv = [self.key_values(f"dec.{m}.user", P, memory.rows) for m in range(self.config.M)]
        return memory

    # ------------------------------------------------------------ decoder

    def tokenize_context(self, batch: JaggedBatch, P) -> Tensor:
        feats = self._embed_fields(P, [("user", batch.user_fields), ("context", batch.ctx_fields)])
        return ops.affine(feats, P["tok.user.W"], P["tok.user.b"])

    def tokenize_items(self, batch: JaggedBatch, P, H: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Returns (H, D0) with D0_i = tok_item(item and cross embeddings of item i) + H of its request."""
        if H is None:
            H = self.tokenize_context(batch, P)
        feats = self._embed_fields(P, [("item", batch.item_fields), ("cross", batch.cross_fields)])
        items = ops.affine(feats, P["tok.item.W"], P["tok.item.b"])
        D0 = ops.add(items, ops.take_rows(H, _segment_ids(batch.item_offsets)))
        return H, D0

    def cross_item_stage(self, D: Tensor, P, m: int, item_offsets) -> Tensor:
        if not self.config.cross_item:
            return D
        return self._attention_block(f"dec.{m}.cross", P, D, item_offsets)

    def decoder_block(self, D: Tensor, memory: Memory, P, m: int, item_offsets) -> Tensor:
        D_bar = self.cross_item_stage(D, P, m, item_offsets)
        kv = memory.kv[m] if memory.kv else None
        return self._attention_block(f"dec.{m}.user", P, D_bar, item_offsets,
                                     mem=memory.rows, mem_offsets=memory.offsets, kv=kv)

    def decode(self, D0: Tensor, memory: Memory, P, item_offsets) -> Tensor:
        D = D0
        for m in range(self.config.M):
            D = self.decoder_block(D, memory, P, m, item_offsets)
        return D

    def heads(self, D: Tensor, P) -> tuple[Tensor, Tensor]:
        out = []
        for head in ("exp", "clk"):
            z = ops.silu(ops.affine(D, P[f"head.{head}.0.W"], P[f"head.{head}.0.b"]))
            out.append(ops.affine(z, P[f"head.{head}.1.W"], P[f"head.{head}.1.b"]))
        return out[0], out[1]

    def logits(self, batch: JaggedBatch, P) -> tuple[Tensor, Tensor]:
        """(exposure logits, click logits), each (total items, 1)."""
        memory = self.project_memory(self.encode(batch, P), P)
        _, D0 = self.tokenize_items(batch, P)
        D = self.decode(D0, memory, P, batch.item_offsets)
        return self.heads(D, P)

    def forward(self, batch: JaggedBatch, params: ParamStore) -> ForwardOutput:
        with no_grad():
            P = params.tensors()
            z_exp, z_clk = self.logits(batch, P)
            p_exp = ops.sigmoid(z_exp).data.reshape(-1)
            p_clk = ops.sigmoid(z_clk).data.reshape(-1)
        return ForwardOutput(p_exp, p_clk, batch.item_offsets.copy())

    # ------------------------------------------------------------ accounting

    def count_params(self) -> int:
        return count_params(self.config, self.schema)

    def count_flops(self, n: int, k: int) -> FlopBreakdown:
        return count_flops(self.config, n, k, self.schema)


def count_params(config: ModelConfig, schema: Schema) -> int:
    """Trainable scalar count from shape arithmetic alone."""
    if schema is None or not schema.fields:
        raise ValueError("count_params needs a schema with at least one field")
    de, d, h = config.d_embed, config.d_token, config.hidden
    lin = lambda a, b: a * b + b  # noqa: E731
    block = 4 * lin(d, d) + 2 * d
    n_fields = len(schema.fields)
    n_ctx = schema.n_fields("user") + schema.n_fields("context")
    n_item = schema.n_fields("item") + schema.n_fields("cross")
    total = sum(f.vocab_size for f in schema.fields) * de
    total += (config.n_max + 1) * de + N_ACTIONS * de
    total += lin(n_fields * de, d) + 2 * lin(de, d) + d
    total += config.L * block
    total += lin(n_ctx * de, d) + lin(n_item * de, d)
    total += config.M * block * (2 if config.cross_item else 1)
    total += 2 * (lin(d, h) + lin(h, 1))
    return total


def _affine_flops(n: int, d_in: int, d_out: int) -> int:
    return 2 * n * d_in * d_out + n * d_out


def _attention_flops(config: ModelConfig, nq: int, nk: int) -> int:
    dh = config.d_token // config.heads
    scaled = 1 if ops.score_scale(dh, config.scale_mode) != 1.0 else 0
    return config.heads * nq * nk * (4 * dh + ops.SILU_FLOPS + scaled)


def count_flops(config: ModelConfig, n: int, k: int, schema: Schema) -> FlopBreakdown:
    """Closed-form forward FLOPs to score one request with ``n`` behaviours and ``k`` items.

    Conventions: a matmul costs 2*m*n*k, bias adds and residual adds one per
    element, SiLU/sigmoid/layer-norm the per-element constants in
    :mod:`homer.ops`; lookups and concatenations are free.
    """
    if n < 0 or k < 0:
        raise ValueError("n and k must be non-negative")
    de, d, h = config.d_embed, config.d_token, config.hidden
    silu = ops.SILU_FLOPS
    out = FlopBreakdown()
    n_mem = max(n, 1)
    if n:
        n_fields = len(schema.fields)
        out.encoder = _affine_flops(n, n_fields * de, d) + 2 * _affine_flops(n, de, d) + 2 * n * d
        per_block = (4 * _affine_flops(n, d, d) + 3 * silu * n * d + _attention_flops(config, n, n)
                     + n * d + ops.LAYER_NORM_FLOPS * n * d)
        out.encoder += config.L * per_block
    out.memory = config.M * 2 * (_affine_flops(n_mem, d, d) + silu * n_mem * d)
    n_ctx = schema.n_fields("user") + schema.n_fields("context")
    n_item = schema.n_fields("item") + schema.n_fields("cross")
    out.context = _affine_flops(1, n_ctx * de, d)
    out.item_tokens = _affine_flops(k, n_item * de, d) + k * d
    if config.cross_item:
        out.cross_item = config.M * (4 * _affine_flops(k, d, d) + 3 * silu * k * d
                                     + _attention_flops(config, k, k) + k * d
                                     + ops.LAYER_NORM_FLOPS * k * d)
    out.user_item = config.M * (2 * _affine_flops(k, d, d) + silu * k * d
                                + _attention_flops(config, k, n_mem) + k * d
                                + ops.LAYER_NORM_FLOPS * k * d)
    out.head = 2 * (_affine_flops(k, d, h) + silu * k * h + _affine_flops(k, h, 1) + ops.SIGMOID_FLOPS * k)
    return out


def flops_matched_pointwise(config: ModelConfig, schema: Schema, n: int, k: int,
                            max_extra: int = 16, tol: float = 0.05) -> ModelConfig:
    """Point-wise variant deepened (extra encoder and user-item blocks) to match ``config``'s FLOPs.

    Searches L' >= L, M' >= M and returns the closest match at reference
    request size (n, k); raises if nothing lands within ``tol``.
    """
    target = count_flops(config, n, k, schema).total
    best = None
    for L in range(config.L, config.L + max_extra + 1):
        for M in range(config.M, config.M + max_extra + 1):
            cand = config.with_(variant="pointwise", L=L, M=M)
            gap = abs(count_flops(cand, n, k, schema).total - target) / target
            key = (gap, L + M, M)
            if best is None or key < best[0]:
                best = (key, cand)
    (gap, _, _), cand = best
    if gap > tol:
        raise ValueError(f"no point-wise depth within {tol:.0%} of target FLOPs (best gap {gap:.1%})")
    return cand


__all__ = [
    "VARIANTS", "ModelConfig", "ForwardOutput", "FlopBreakdown", "Memory", "HoMer",
    "count_params", "count_flops", "flops_matched_pointwise",
]
