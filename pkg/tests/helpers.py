"""Shared builders for small random requests."""

import numpy as np

from homer.data import FieldSchema, RequestSample, Schema


def tiny_schema(vocab=5) -> Schema:
    return Schema([
        FieldSchema(1, "user", vocab),
        FieldSchema(2, "item", vocab),
        FieldSchema(3, "item", vocab),
        FieldSchema(4, "cross", vocab),
        FieldSchema(5, "context", vocab),
    ])


def random_request(rng, schema: Schema, n: int | None = None, k: int | None = None,
                   rid: int = 0, n_hi: int = 6, k_hi: int = 5) -> RequestSample:
    """Random valid request; ids drawn from each field's full vocabulary."""
    n = int(rng.integers(0, n_hi + 1)) if n is None else n
    k = int(rng.integers(1, k_hi + 1)) if k is None else k

    def ids(domain, rows=None):
        vocab = [f.vocab_size for f in schema.domain_fields(domain)]
        shape = (len(vocab),) if rows is None else (rows, len(vocab))
        return rng.integers(0, vocab, size=shape).astype(np.int64)

    y_exp = rng.integers(0, 2, k)
    return RequestSample(
        request_id=rid,
        user_fields=ids("user"), ctx_fields=ids("context"),
        seq_item=ids("item", n), seq_cross=ids("cross", n),
        seq_user=ids("user", n), seq_ctx=ids("context", n),
        seq_position=np.arange(n, dtype=np.int64),
        seq_action=rng.integers(0, 3, n).astype(np.int64),
        item_fields=ids("item", k), cross_fields=ids("cross", k),
        y_exp=y_exp.astype(np.int64),
        y_clk=(y_exp * rng.integers(0, 2, k)).astype(np.int64),
    )


def random_requests(seed: int, count: int, schema: Schema, **kw) -> list[RequestSample]:
    rng = np.random.default_rng(seed)
    return [random_request(rng, schema, rid=i, **kw) for i in range(count)]
