import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_request, random_requests, tiny_schema
from homer.autograd import row_stable
from homer.data import make_batch
from homer.model import VARIANTS, HoMer, ModelConfig, count_flops
from homer.serving import (
    BENCH_COLUMNS, bench, measured_flops, pointwise_serving_flops, predict_request, savings_ratio,
    serving_flops, shard_items,
)

CFG = ModelConfig(L=1, M=1, d_embed=4, d_token=8, dtype="float64")


def _model(variant="full", schema=None):
    m = HoMer(CFG.with_(variant=variant), schema or tiny_schema())
    return m, m.init_params(seed=1)


# ---------------------------------------------------------------- shard planning


def test_shard_examples():
    assert shard_items(300, 300).ranges == ((0, 300),)
    assert shard_items(1, 300).ranges == ((0, 1),)
    assert shard_items(650, 300).lengths() == [300, 300, 50]
    assert shard_items(7, 1).n_shards == 7


def test_shard_rejects_bad_sizes():
    for k, s in ((0, 3), (3, 0), (-1, 1)):
        with pytest.raises(ValueError):
            shard_items(k, s)


@given(st.integers(1, 50), st.data())
def test_shard_partition_property(size, data):
    k = data.draw(st.integers(1, 10 * size))
    plan = shard_items(k, size)
    assert plan.n_shards == -(-k // size)
    assert plan.ranges[0][0] == 0 and plan.ranges[-1][1] == k
    assert all(a[1] == b[0] for a, b in zip(plan.ranges, plan.ranges[1:]))
    assert all(n == size for n in plan.lengths()[:-1])
    assert 1 <= plan.lengths()[-1] <= size


# ---------------------------------------------------------------- prediction


@pytest.mark.parametrize("variant", VARIANTS)
def test_single_shard_equals_forward(variant):
    model, params = _model(variant)
    for r in random_requests(2, 6, model.schema, n_hi=8, k_hi=9):
        got = predict_request(model, params, r, shard_size=300)
        want = model.forward(make_batch([r]), params)
        assert got.invocations == 1
        np.testing.assert_array_equal(got.p_clk, want.p_clk)
        np.testing.assert_array_equal(got.p_exp, want.p_exp)


def test_k300_single_invocation():
    model, params = _model()
    r = random_request(np.random.default_rng(0), model.schema, n=5, k=300)
    assert predict_request(model, params, r).invocations == 1
    assert predict_request(model, params, r.select_items(np.arange(299))).invocations == 1


def test_pointwise_sharding_is_exact():
    model, params = _model("pointwise")
    r = random_request(np.random.default_rng(3), model.schema, n=6, k=8)
    with row_stable():
        whole = predict_request(model, params, r, shard_size=8)
        split = predict_request(model, params, r, shard_size=4)
    assert split.invocations == 2
    np.testing.assert_allclose(split.p_clk, whole.p_clk, atol=1e-6, rtol=0)
    np.testing.assert_allclose(split.p_exp, whole.p_exp, atol=1e-6, rtol=0)


def test_full_variant_sharding_changes_cross_item_context():
    # splitting changes which items attend to each other, so scores move
    model, params = _model("full")
    r = random_request(np.random.default_rng(3), model.schema, n=6, k=8)
    whole = predict_request(model, params, r, shard_size=8)
    split = predict_request(model, params, r, shard_size=4)
    assert np.all(np.isfinite(split.p_clk))
    assert np.max(np.abs(split.p_clk - whole.p_clk)) > 0


# ---------------------------------------------------------------- flops and bench


@pytest.mark.parametrize("k,size", [(1, 300), (5, 300), (9, 4), (12, 5)])
def test_measured_serving_flops_match_analytic(k, size):
    model, params = _model()
    r = random_request(np.random.default_rng(k), model.schema, n=7, k=k)
    assert measured_flops(model, params, r, size) == serving_flops(model, 7, k, size)


def test_single_item_has_no_savings():
    model, _ = _model()
    assert savings_ratio(model, 40, 1) == 1.0
    assert pointwise_serving_flops(model, 40, 1) == count_flops(CFG, 40, 1, model.schema).total


def test_encoder_cost_independent_of_k():
    schema = tiny_schema()
    for cfg in (CFG, CFG.with_(L=2, M=2), CFG.with_(variant="pointwise")):
        enc = {count_flops(cfg, 50, k, schema).encoder for k in (1, 2, 17, 300)}
        assert len(enc) == 1


def test_setwise_cheaper_and_savings_grow_with_k_at_full_length():
    model, _ = _model()
    ratios = [savings_ratio(model, 512, k) for k in range(1, 301)]
    assert all(serving_flops(model, 512, k) < pointwise_serving_flops(model, 512, k) for k in range(2, 301))
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_bench_report(tmp_path):
    model, params = _model()
    rng = np.random.default_rng(0)
    samples = [random_request(rng, model.schema, n=30, k=k, rid=k) for k in (1, 3, 6, 12, 20)]
    rep = bench(model, params, samples, edges=(1, 4, 8, 16))
    assert rep.setwise_flops == sum(serving_flops(model, 30, s.n_items) for s in samples)
    assert rep.pointwise_flops == sum(pointwise_serving_flops(model, 30, s.n_items) for s in samples)
    assert rep.max_shard_divergence > 0
    text = rep.to_csv(header="homer bench config=x")
    lines = text.splitlines()
    assert lines[0] == "# homer bench config=x"
    assert tuple(lines[1].split(",")) == BENCH_COLUMNS
    assert len(lines) == 2 + 2 * 5
    ratios = [r.savings_ratio for r in rep.rows if r.mode == "setwise"]
    assert ratios[0] == 1.0
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
