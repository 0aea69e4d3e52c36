import csv
import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homer.ablation import ABLATION_COLUMNS, reference_size, run_ablation, variant_configs
from homer.metrics import PROB_CLAMP, auc, clk_loss, imp_loss, logloss, total_loss
from homer.model import VARIANTS, ModelConfig, count_flops
from homer.params import checkpoint_bytes
from homer.synth import GenConfig, generate
from homer.train import (
    DEFAULT_LAMBDA, DEFAULT_LR, NonFiniteLossError, TrainConfig, metrics_csv, split_holdout,
    train_one_epoch,
)

TINY = ModelConfig(L=1, M=1, d_embed=4, d_token=8, n_max=16)


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------------- losses


def test_clk_loss_examples():
    assert clk_loss([0.5, 0.5], [1, 0], [1, 1]) == pytest.approx(math.log(2))
    assert clk_loss([0.9, 0.2], [1, 0], [1, 1]) == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2)
    assert clk_loss([0.9, 0.2], [1, 0], [1, 1]) == pytest.approx(0.164252, abs=1e-6)
    assert clk_loss([0.3], [1], [0]) == 0.0


def test_clk_loss_ignores_unexposed_labels():
    p, e = [0.9, 0.3, 0.6], [1, 0, 1]
    assert clk_loss(p, [1, 0, 0], e) == clk_loss(p, [1, 1, 0], e)


def test_imp_loss_examples():
    assert imp_loss([0.5] * 4, [1, 0, 1, 0]) == pytest.approx(math.log(2))
    assert imp_loss([1.0, 0.0], [1, 0]) <= -math.log(1 - PROB_CLAMP) + 1e-15
    want = -(math.log(0.7) + math.log(0.6) + math.log(0.1)) / 3
    assert imp_loss([0.7, 0.4, 0.9], [1, 0, 0]) == pytest.approx(want, rel=1e-12)


def test_total_loss():
    assert total_loss(0.3, 0.2, 1.0) == 0.5
    assert total_loss(0.3, 0.2, 0.0) == 0.3
    assert total_loss(0.3, 0.2, 1.0, variant="pointwise") == 0.3
    assert total_loss(0.3, 0.2, 1.0, variant="no_imp_loss") == 0.3
    assert total_loss(0.3, 0.2, 1.0, variant="no_cross_item") == 0.5


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 3))
def test_total_minus_click_is_impression_term(l_clk, l_imp, lam):
    total = total_loss(l_clk, l_imp, lam)
    assert total == l_clk + lam * l_imp
    assert abs((total - total_loss(l_clk, 0.0, lam)) - lam * l_imp) <= np.spacing(total)


def test_training_defaults():
    assert DEFAULT_LR == 1e-4 and DEFAULT_LAMBDA == 1.0
    cfg = TrainConfig()
    assert cfg.lr == 1e-4 and cfg.lam == 1.0 and cfg.epochs == 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=2)
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1e-3)


# ---------------------------------------------------------------- metrics


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == 0.75
    assert auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == brute_auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0])


def test_auc_single_class_is_absent():
    assert auc([0.1, 0.2], [1, 1]) is None
    assert auc([0.1, 0.2], [0, 0]) is None


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_brute_force_with_ties(pairs):
    scores = [s / 6 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        assert auc(scores, labels) is None
    else:
        assert auc(scores, labels) == brute_auc(scores, labels)


@given(st.integers(0, 2**31 - 1))
def test_auc_monotone_invariance_and_complement(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=30)
    y = rng.integers(0, 2, 30)
    y[:2] = [0, 1]
    a = auc(s, y)
    assert auc(np.exp(s), y) == a
    assert auc(3 * s + 1, y) == a
    assert auc(-s, y) == pytest.approx(1 - a, abs=1e-12)


def test_logloss_examples():
    assert logloss([0.5], [1]) == pytest.approx(math.log(2))
    assert logloss([1.0], [1]) == pytest.approx(-math.log(1 - 1e-7))
    assert logloss([1.0], [1]) == pytest.approx(1e-7, rel=1e-6)
    want = -(math.log(0.8) + math.log(0.75) + math.log(0.6)) / 3
    assert logloss([0.8, 0.25, 0.6], [1, 0, 1]) == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------- training


@pytest.fixture(scope="module")
def small_data():
    ds = generate(GenConfig(n_users=100, n_requests=600, n_max=16, seed=3))
    return ds.schema, ds.samples


def test_split_holdout_is_last_fraction(small_data):
    _, samples = small_data
    train, held = split_holdout(samples, 0.1)
    assert len(held) == 60 and held == samples[-60:] and train == samples[:-60]


def test_training_is_bitwise_reproducible(small_data):
    schema, samples = small_data
    cfg = TrainConfig(lr=1e-3, batch_size=32, seed=4)
    a = train_one_epoch(samples[:200], schema, TINY, cfg)
    b = train_one_epoch(samples[:200], schema, TINY, cfg)
    assert checkpoint_bytes(a.params) == checkpoint_bytes(b.params)
    assert metrics_csv(a.log) == metrics_csv(b.log)
    assert len(a.log) == math.ceil(180 / 32)


def test_lr_zero_leaves_params_and_loss_constant(small_data):
    schema, samples = small_data
    res = train_one_epoch(samples[:100], schema, TINY, TrainConfig(lr=0.0, batch_size=30))
    assert res.params.bitwise_equal(res.model.init_params())
    # every batch holds the same request, so with frozen params every step sees the same loss
    same = [samples[5]] * 60
    res = train_one_epoch(same, schema, TINY, TrainConfig(lr=0.0, batch_size=10, holdout_frac=0.0))
    assert len({s.total for s in res.log}) == 1


def test_learns_planted_signal(small_data):
    schema, samples = small_data
    res = train_one_epoch(samples, schema, TINY, TrainConfig(lr=3e-3, batch_size=16))
    assert res.report.auc_clk > 0.5
    assert res.report.n_requests == 60


def test_non_finite_loss_reports_step(small_data):
    schema, samples = small_data
    from homer.model import HoMer
    params = HoMer(TINY, schema).init_params()
    params["head.clk.1.b"] = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NonFiniteLossError) as info:
        train_one_epoch(samples[:50], schema, TINY, TrainConfig(), params=params)
    assert info.value.step == 0


def test_empty_dataset_rejected(small_data):
    schema, _ = small_data
    with pytest.raises(ValueError):
        train_one_epoch([], schema, TINY)


def test_metrics_csv_layout():
    from homer.train import StepLog
    text = metrics_csv([StepLog(0, 0.5, 0.25, 0.75)], header="homer train config=abc")
    lines = text.splitlines()
    assert lines[0] == "# homer train config=abc"
    assert lines[1] == "step,l_clk,l_imp,total"
    assert lines[2] == "0,0.5,0.25,0.75"


# ---------------------------------------------------------------- ablation harness


def test_run_ablation_table_shape(small_data):
    schema, samples = small_data
    table = run_ablation((schema, samples[:150]), TINY, TrainConfig(lr=1e-3), seeds=(0,))
    rows = list(csv.reader(io.StringIO(table.to_csv())))
    assert tuple(rows[0]) == ABLATION_COLUMNS
    assert len(rows) == 5
    assert {r[0] for r in rows[1:]} == set(VARIANTS)
    pw = next(r for r in table.rows if r.variant == "pointwise")
    full = next(r for r in table.rows if r.variant == "full")
    assert pw.params != full.params
    fit, _ = split_holdout(samples[:150], 0.1)
    cfgs = variant_configs(TINY, schema, fit)
    n, k = reference_size(fit)
    target = count_flops(cfgs["full"], n, k, schema).total
    assert abs(count_flops(cfgs["pointwise"], n, k, schema).total - target) <= 0.05 * target


def test_run_ablation_rejects_unknown_variant(small_data):
    with pytest.raises(ValueError):
        run_ablation(small_data, TINY, variants=("full", "bogus"))
