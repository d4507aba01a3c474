import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmdp_lab.cmdp import (
    Cmdp,
    StateFeatures,
    from_document,
    induced_chain,
    mixing_profile,
    save_cmdp,
    load_cmdp,
    stationary_distribution,
    to_document,
    validate_cmdp,
    validate_features,
)


def two_state_model(rows, cost=None, ccost=None, thresholds=(1.0,), bound=2.0):
    rows = np.asarray(rows, dtype=float)
    cost = np.zeros((2, 1)) if cost is None else np.asarray(cost, dtype=float)
    ccost = np.zeros((1, 2, 1)) if ccost is None else np.asarray(ccost, dtype=float)
    return Cmdp(rows[:, None, :], cost, ccost, thresholds, bound)


class TestValidation:
    def test_valid_by_construction(self):
        m = two_state_model([[0.5, 0.5], [0.5, 0.5]])
        assert validate_cmdp(m).ok

    def test_row_sum_violation(self):
        m = two_state_model([[0.6, 0.6], [0.5, 0.5]])
        report = validate_cmdp(m)
        assert not report.ok
        assert any("row sum" in f for f in report.failures)

    def test_negative_cost(self):
        m = two_state_model([[0.5, 0.5], [0.5, 0.5]], cost=[[-1.0], [0.0]])
        report = validate_cmdp(m)
        assert not report.ok
        assert any("negative cost" in f for f in report.failures)

    def test_cost_bound_and_threshold(self):
        m = two_state_model([[0.5, 0.5], [0.5, 0.5]], cost=[[3.0], [0.0]], thresholds=(0.0,))
        failures = validate_cmdp(m).failures
        assert any("exceeds bound" in f for f in failures)
        assert any("threshold" in f for f in failures)


class TestInducedChain:
    def test_deterministic_policy_selects_slice(self, small_model):
        probs = np.zeros((small_model.n_states, small_model.n_actions))
        probs[:, 0] = 1.0
        P = induced_chain(small_model, probs)
        assert np.array_equal(P, small_model.transition[:, 0, :])

    def test_uniform_policy_averages_slices(self, small_model):
        probs = np.full((small_model.n_states, small_model.n_actions), 0.5)
        P = induced_chain(small_model, probs)
        expected = 0.5 * (small_model.transition[:, 0, :] + small_model.transition[:, 1, :])
        assert np.allclose(P, expected, atol=1e-15)

    def test_hand_set_slices_elementwise(self):
        # 2 states, 2 actions; every entry verified by direct summation
        p = np.array(
            [
                [[0.1, 0.9], [0.8, 0.2]],
                [[0.4, 0.6], [0.5, 0.5]],
            ]
        )
        m = Cmdp(p, np.zeros((2, 2)), np.zeros((1, 2, 2)), [1.0])
        probs = np.array([[0.25, 0.75], [0.6, 0.4]])
        P = induced_chain(m, probs)
        assert np.isclose(P[0, 0], 0.25 * 0.1 + 0.75 * 0.8)
        assert np.isclose(P[0, 1], 0.25 * 0.9 + 0.75 * 0.2)
        assert np.isclose(P[1, 0], 0.6 * 0.4 + 0.4 * 0.5)
        assert np.isclose(P[1, 1], 0.6 * 0.6 + 0.4 * 0.5)

    def test_dimension_mismatch(self, small_model):
        with pytest.raises(ValueError, match="policy shape"):
            induced_chain(small_model, np.ones((3, 2)))

    @given(st.integers(0, 2**32 - 1))
    def test_rows_stochastic(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(4), size=(4, 3))
        m = Cmdp(p, np.zeros((4, 3)), np.zeros((1, 4, 3)), [1.0])
        probs = rng.dirichlet(np.ones(3), size=4)
        P = induced_chain(m, probs)
        assert np.abs(P.sum(axis=1) - 1.0).max() < 1e-12


def power_iteration_oracle(P, max_steps=1_000_000):
    mu = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_steps):
        nxt = mu @ P
        if np.abs(nxt - mu).max() < 1e-16:
            return nxt
        mu = nxt
    return mu


class TestStationaryDistribution:
    def test_symmetric_chains(self):
        for P in ([[0.5, 0.5], [0.5, 0.5]], [[0.9, 0.1], [0.1, 0.9]]):
            assert np.allclose(stationary_distribution(np.array(P)), [0.5, 0.5], atol=1e-12)

    def test_asymmetric_chain_vs_power_oracle(self):
        P = np.array([[0.5, 0.5], [0.2, 0.8]])
        mu = stationary_distribution(P)
        assert np.allclose(mu, power_iteration_oracle(P), atol=1e-12)
        assert np.allclose(mu, [2 / 7, 5 / 7], atol=1e-12)

    def test_periodic_chain_rejected(self):
        with pytest.raises(ValueError, match="no unique stationary distribution"):
            stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_reducible_chain_rejected(self):
        P = np.array([[1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(ValueError, match="no unique stationary distribution"):
            stationary_distribution(P)

    @given(st.integers(0, 2**32 - 1))
    def test_random_10_state_chains_match_power_oracle(self, seed):
        rng = np.random.default_rng(seed)
        P = 0.01 + 0.9 * rng.dirichlet(np.ones(10), size=10)
        P /= P.sum(axis=1, keepdims=True)
        mu = stationary_distribution(P)
        assert np.abs(mu @ P - mu).max() < 1e-10
        assert np.abs(mu - power_iteration_oracle(P)).max() < 1e-8


class TestMixingProfile:
    def test_one_step_mixing(self):
        P = np.array([[0.5, 0.5], [0.5, 0.5]])
        prof = mixing_profile(P, stationary_distribution(P), 10)
        assert prof.distances[1] == pytest.approx(0.0, abs=1e-15)
        assert prof.mixes

    def test_matches_eigendecomposition_oracle(self):
        P = np.array([[0.9, 0.1], [0.1, 0.9]])
        mu = stationary_distribution(P)
        prof = mixing_profile(P, mu, 25)
        # eigen-decomposition: P^tau rows are mu +/- 0.5 * 0.8^tau (1, -1)
        lam = sorted(np.linalg.eigvals(P))[0]
        assert lam == pytest.approx(0.8, abs=1e-12)
        for tau in range(26):
            assert prof.distances[tau] == pytest.approx(0.5 * 0.8**tau, abs=1e-12)
        assert prof.rate == pytest.approx(0.8, abs=1e-6)
        assert prof.scale == pytest.approx(0.5, rel=1e-6)

    def test_periodic_chain_fails_audit(self):
        P = np.array([[0.0, 1.0], [1.0, 0.0]])
        prof = mixing_profile(P, np.array([0.5, 0.5]), 10)
        assert not prof.mixes
        assert prof.rate >= 1.0

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_for_lazy_chains(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.ones(5), size=5)
        P = 0.9 * P + 0.1 * np.eye(5)  # self-loops >= 0.05
        P /= P.sum(axis=1, keepdims=True)
        prof = mixing_profile(P, stationary_distribution(P), 40)
        diffs = np.diff(prof.distances)
        assert (diffs <= 1e-12).all()


class TestFeatures:
    def test_norm_and_rank_audits(self):
        good = StateFeatures(np.eye(3))
        assert validate_features(good).ok
        too_big = StateFeatures(2.0 * np.eye(3))
        assert any("norm" in f for f in validate_features(too_big).failures)
        deficient = StateFeatures(np.ones((3, 2)) / 2)
        assert any("rank" in f for f in validate_features(deficient).failures)


class TestSerialization:
    def test_round_trip_value_identical(self, small_model, tmp_path):
        feats = StateFeatures(np.eye(small_model.n_states))
        rng = np.random.default_rng(1)
        x_sa = rng.normal(size=(small_model.n_states, small_model.n_actions, 3))
        path = tmp_path / "inst.json"
        save_cmdp(path, small_model, state_features=feats, sa_features=x_sa)
        loaded, lf, lsa = load_cmdp(path)
        assert np.array_equal(loaded.transition, small_model.transition)
        assert np.array_equal(loaded.cost, small_model.cost)
        assert np.array_equal(loaded.constraint_costs, small_model.constraint_costs)
        assert np.array_equal(loaded.thresholds, small_model.thresholds)
        assert loaded.cost_bound == small_model.cost_bound
        assert np.array_equal(lf.matrix, feats.matrix)
        assert np.array_equal(lsa, x_sa)

    def test_document_fields(self, small_model):
        doc = to_document(small_model)
        assert set(doc) == {
            "n_states",
            "n_actions",
            "transition",
            "cost",
            "constraint_costs",
            "thresholds",
            "cost_bound",
        }
        # double round trip through the text form stays identical
        text = json.dumps(doc)
        again = to_document(from_document(json.loads(text))[0])
        assert json.dumps(again) == text

    def test_dimension_disagreement_rejected(self, small_model):
        doc = to_document(small_model)
        doc["n_states"] = 99
        with pytest.raises(ValueError, match="disagree"):
            from_document(doc)
