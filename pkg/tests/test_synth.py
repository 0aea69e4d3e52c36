import math

import numpy as np
import pytest

from homer.data import dataset_bytes, validate_request
from homer.metrics import auc
from homer.synth import (
    GenConfig, UnknownRequestError, click_probabilities, competition_term, expose_top, generate,
    history_affinity, oracle_click_prob, read_gen_config, write_gen_config,
)

SMALL = GenConfig(n_users=50, n_requests=400, n_max=12)


@pytest.fixture(scope="module")
def small():
    return generate(SMALL)


def test_same_seed_byte_identical():
    a, b = generate(SMALL), generate(SMALL)
    assert dataset_bytes(a.samples, a.schema) == dataset_bytes(b.samples, b.schema)
    c = generate(SMALL.with_(seed=1))
    assert dataset_bytes(a.samples, a.schema) != dataset_bytes(c.samples, c.schema)


def test_samples_valid_and_exposure_count(small):
    for s in small.samples:
        assert validate_request(s, small.schema, n_max=SMALL.n_max) == []
        assert s.y_exp.sum() == min(SMALL.slots, s.n_items)
        assert SMALL.k_min <= s.n_items <= SMALL.k_max


def test_sequences_come_from_earlier_requests(small):
    with_history = [s for s in small.samples if s.n_behaviors]
    assert with_history
    assert max(s.n_behaviors for s in small.samples) == SMALL.n_max
    for s in with_history[:50]:
        assert s.seq_position.tolist() == list(range(s.n_behaviors))


def test_impression_filter():
    ds = generate(SMALL.with_(include_impressions=False))
    acts = np.concatenate([s.seq_action for s in ds.samples])
    assert len(acts) and set(acts.tolist()) <= {1, 2}


def test_config_validation():
    for bad in (dict(alpha=-1), dict(gamma=-0.1), dict(k_max=301), dict(k_min=0),
                dict(slots=0), dict(competition="mean")):
        with pytest.raises(ValueError):
            GenConfig(**bad)


def test_gen_config_text_round_trip(tmp_path):
    gen = SMALL.with_(gamma=0.25, competition="sum", include_impressions=False)
    write_gen_config(tmp_path / "g.txt", gen)
    assert read_gen_config(tmp_path / "g.txt") == gen
    with pytest.raises(KeyError):
        GenConfig.from_text("bogus=1\n")


# ---------------------------------------------------------------- click formula


def test_noise_free_no_competition_is_sigmoid_q():
    q = np.array([0.3, -1.2, 2.0])
    p = click_probabilities(q, [1, 1, 1], np.zeros(3), gamma=0.0)
    np.testing.assert_array_equal(p, 1 / (1 + np.exp(-q)))


def test_two_item_request_by_hand():
    q, eps, g = np.array([1.5, 0.5]), np.array([0.1, -0.2]), 0.8
    p = click_probabilities(q, [1, 1], eps, gamma=g)
    assert p[0] == pytest.approx(1 / (1 + math.exp(-(1.5 - g * 0.5 + 0.1))), rel=1e-14)
    assert p[1] == pytest.approx(1 / (1 + math.exp(-(0.5 - g * 1.5 - 0.2))), rel=1e-14)


def test_duplicated_strongest_item_drops_by_gamma_max():
    q = np.array([2.0, 0.5, -0.3])
    eps = np.zeros(4)
    g = 1.0
    before = click_probabilities(q, [1, 1, 1], eps[:3], gamma=g)
    after = click_probabilities(np.append(q, 2.0), [1, 1, 1, 1], eps, gamma=g)
    logit = lambda p: math.log(p / (1 - p))  # noqa: E731
    # the strongest item's own competitor goes from 0.5 to its twin's 2.0
    assert logit(before[0]) - logit(after[0]) == pytest.approx(g * (2.0 - 0.5), rel=1e-12)
    assert after[0] == after[3]


def test_unexposed_items_have_zero_probability():
    p = click_probabilities([1.0, 2.0, 3.0], [0, 1, 1], np.zeros(3), gamma=1.0)
    assert p[0] == 0.0


def test_competition_modes():
    q = np.array([1.0, 3.0, 2.0, 5.0])
    exposed = np.array([1, 1, 1, 0])
    np.testing.assert_array_equal(competition_term(q, exposed, "max"), [3.0, 2.0, 3.0, 0.0])
    np.testing.assert_array_equal(competition_term(q, exposed, "sum"), [5.0, 3.0, 4.0, 0.0])
    assert competition_term(np.array([4.0]), np.array([1]), "max")[0] == 0.0


def test_expose_top():
    assert expose_top(np.array([0.1, 0.9, 0.5, 0.7]), 2).tolist() == [0, 1, 0, 1]
    assert expose_top(np.array([0.1, 0.9]), 5).tolist() == [1, 1]


def test_history_affinity_weights():
    seq_item = np.array([[0], [1], [0]])
    seq_ctx = np.array([[2], [2], [0]])
    actions = np.array([1, 2, 0])
    got = history_affinity(seq_item, seq_ctx, actions, np.array([0, 1, 3]), hour_id=2)
    # click on cat 0 in hour 2 -> 2; order on cat 1 in hour 2 -> 4; impression -> 0; total 6
    np.testing.assert_allclose(got, [2 / 7, 4 / 7, 0.0])
    assert not history_affinity(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.array([1]), 0).any()


# ---------------------------------------------------------------- oracle


def test_oracle_matches_stored_latents(small):
    s = small.samples[123]
    lat = small.latent[123]
    p = oracle_click_prob(s, SMALL)
    want = click_probabilities(lat.q, s.y_exp, lat.eps, SMALL.gamma, SMALL.click_bias, SMALL.competition)
    np.testing.assert_array_equal(p, want)
    assert np.all(p[s.y_exp == 0] == 0)


def test_oracle_unknown_request(small):
    s = small.samples[3]
    with pytest.raises(UnknownRequestError):
        oracle_click_prob(s.replace(request_id=10_000), SMALL)
    with pytest.raises(UnknownRequestError):
        oracle_click_prob(s.replace(y_clk=1 - s.y_clk), SMALL)


def test_gamma_zero_clicks_ignore_co_exposed_items():
    gen = SMALL.with_(gamma=0.0)
    ds = generate(gen)
    for s in ds.samples[:50]:
        lat = ds.latent[s.request_id]
        exp = s.y_exp == 1
        alone = 1 / (1 + np.exp(-(lat.q + lat.eps)))
        np.testing.assert_allclose(oracle_click_prob(s, gen)[exp], alone[exp], rtol=1e-12)


def test_oracle_auc_in_target_regime():
    gen = GenConfig(n_requests=4000, k_max=20)
    ds = generate(gen)
    p = np.concatenate([ds.latent[s.request_id].p_click[s.y_exp == 1] for s in ds.samples])
    y = np.concatenate([s.y_clk[s.y_exp == 1] for s in ds.samples])
    assert 0.75 <= auc(p, y) <= 0.85


def test_alpha_zero_masking_cannot_hurt_oracle():
    # with alpha = 0 the sequence does not enter q, so the oracle is unchanged by masking
    gen = SMALL.with_(alpha=0.0)
    a = generate(gen)
    b = generate(gen.with_(n_max=1))
    for s, t in zip(a.samples[:100], b.samples[:100]):
        np.testing.assert_array_equal(a.latent[s.request_id].q, b.latent[t.request_id].q)
