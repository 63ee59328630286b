import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from budgetab.design import bernoulli_design, unconstrained_optimal_design
from budgetab.estimators import (EstimatorError, hajek_estimator, ht_estimator,
                                 mse_upper_bound, plugin_estimator, trial_estimates,
                                 variance_closed_form)
from budgetab.model import ProblemInstance, UtilityModel, expected_tte
from budgetab.sampling import draw_trials, enumerate_outcomes, rng_for
from conftest import make_instance, one_hot, random_instance


class TestHT:
    def test_zero(self):
        assert ht_estimator(np.zeros((2, 2)), np.eye(2), np.eye(2)[::-1], np.full((2, 2), .5)) == 0

    def test_single_edge(self):
        assert ht_estimator([[2.0]], [[1]], [[0]], [[0.5]]) == 4

    def test_zero_zero_convention(self):
        assert ht_estimator([[0.0, 0.0]], [[1, 0]], [[0, 1]], [[0.0, 0.0]]) == 0

    def test_inconsistent(self):
        with pytest.raises(EstimatorError, match=r"\(0, 1\)"):
            ht_estimator([[0.0, 1.0]], [[1, 0]], [[0, 1]], [[0.5, 0.0]])

    def test_unbiased_by_enumeration(self):
        rng = np.random.default_rng(2)
        w1, w0 = one_hot([0, 1], 2), one_hot([1, 1], 2)
        C = rng.uniform(0.5, 1.5, (2, 2))
        util = UtilityModel.two_point(rng.uniform(0, 1, (2, 2)), rng.uniform(1, 3, (2, 2)), 0.4)
        inst = ProblemInstance(C, np.array([1.0, 1.2]), w0, w1, util)
        X = bernoulli_design(w0, w1, 0.5)
        outcomes = enumerate_outcomes(X, C, inst.budgets, "random")
        P = sum(p * W for p, W in outcomes)
        mean = 0.0
        lo, hi, ph = (util.generator[k] for k in ("low", "high", "p_high"))
        for p, W in outcomes:
            edges = np.argwhere(W)
            for vals in itertools.product(*[[(lo[i, j], 1 - ph[i, j]), (hi[i, j], ph[i, j])]
                                           for i, j in edges]):
                O = np.zeros((2, 2))
                q = p
                for (i, j), (v, pv) in zip(edges, vals):
                    O[i, j] = v
                    q *= pv
                mean += q * ht_estimator(O, w1, w0, P)
        assert mean == pytest.approx(expected_tte(inst), abs=1e-12)


class TestPlugin:
    def test_single_edge(self):
        assert plugin_estimator([[2.0]], [[1]], [[0]], [[0.5]]) == 4

    def test_equals_ht_when_p_equals_x(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0.1, 0.5, (5, 2))
        O = rng.uniform(0, 2, (5, 2)) * (rng.random((5, 2)) < 0.5)
        w1, w0 = one_hot(rng.integers(2, size=5), 2), one_hot(rng.integers(2, size=5), 2)
        assert plugin_estimator(O, w1, w0, X) == ht_estimator(O, w1, w0, X)

    def test_unbiased_with_slack_budget(self):
        inst = random_instance(np.random.default_rng(3), 50, 5, slack="full")
        X = unconstrained_optimal_design(inst)
        est = np.concatenate([trial_estimates(inst, X, kept, rng) for rng, _, kept in
                              draw_trials(X, inst.costs, inst.budgets, "random", 20_000, 1)])
        se = est.std() / np.sqrt(est.size)
        assert abs(est.mean() - expected_tte(inst)) <= 3 * se

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sign_symmetry_and_linearity(self, seed):
        rng = np.random.default_rng(seed)
        m, n = 6, 3
        w1, w0 = one_hot(rng.integers(n, size=m), n), one_hot(rng.integers(n, size=m), n)
        X = rng.uniform(0.05, 0.3, (m, n))
        O = rng.uniform(0, 3, (m, n)) * (rng.random((m, n)) < 0.5)
        U = rng.uniform(0.5, 2, (m, n))
        assert plugin_estimator(O, w0, w1, X) == -plugin_estimator(O, w1, w0, X)
        assert ht_estimator(O, w0, w1, X) == -ht_estimator(O, w1, w0, X)
        h, h_swap = hajek_estimator(O, w1, w0, X, U), hajek_estimator(O, w0, w1, X, U)
        assert (np.isnan(h) and np.isnan(h_swap)) or h == pytest.approx(-h_swap, abs=1e-12)
        mask = rng.random((m, n)) < 0.5
        Oa, Ob = np.where(mask, O, 0), np.where(mask, 0, O)
        assert plugin_estimator(Oa + Ob, w1, w0, X) == pytest.approx(
            plugin_estimator(Oa, w1, w0, X) + plugin_estimator(Ob, w1, w0, X), abs=1e-12)

    def test_coincident_rows_contribute_zero(self):
        rng = np.random.default_rng(5)
        w = one_hot(rng.integers(3, size=8), 3)
        X = 0.5 * w + 0.1
        for _ in range(20):
            O = rng.uniform(0, 2, (8, 3)) * w * (rng.random((8, 1)) < 0.5)
            assert plugin_estimator(O, w, w, X) == 0


class TestHajek:
    def test_constant_utilities(self):
        w1, w0 = np.eye(2), np.eye(2)[::-1]
        O = np.full((2, 2), 3.0)
        val = hajek_estimator(O, w1, w0, np.full((2, 2), 0.5), np.full((2, 2), 3.0))
        assert val == pytest.approx(0.0)

    def test_arm_value(self):
        w1, w0 = np.eye(2), np.eye(2)[::-1]
        O = np.full((2, 2), 3.0)
        # each arm evaluates to m * c
        val = hajek_estimator(O * w1, w1, np.zeros((2, 2)), np.full((2, 2), 0.5),
                              np.full((2, 2), 3.0))
        assert val == pytest.approx(2 * 3.0)

    def test_empty_arm_undefined(self):
        w1, w0 = np.eye(2), np.eye(2)[::-1]
        O = 2.0 * w0
        assert np.isnan(hajek_estimator(O, w1, w0, np.full((2, 2), 0.5), np.ones((2, 2))))

    def test_vectorised_matches_scalar(self):
        inst = random_instance(np.random.default_rng(7), 20, 3)
        X = 0.5 * (inst.w0 + inst.w1)
        for rng, _, kept in draw_trials(X, inst.costs, inst.budgets, "random", 200, 3):
            est = trial_estimates(inst, X, kept, rng, "hajek")
        U = inst.utility.mu
        for t in range(200):
            W = np.zeros((20, 3))
            k = kept[t] >= 0
            W[np.flatnonzero(k), kept[t][k]] = 1
            ref = hajek_estimator(W * U, inst.w1, inst.w0, X, U)
            if np.isnan(ref):
                assert np.isnan(est[t])
            else:
                assert est[t] == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_report_against_ht(self, capsys):
        inst = random_instance(np.random.default_rng(8), 60, 6, slack="full")
        X = 0.5 * (inst.w0 + inst.w1)
        out = {}
        for kind in ("ht", "hajek"):
            out[kind] = np.concatenate([trial_estimates(inst, X, kept, rng, kind) for rng, _, kept
                                        in draw_trials(X, inst.costs, inst.budgets, "random",
                                                       5000, 2)])
        with capsys.disabled():
            print(f"\n  tte={expected_tte(inst):.3f} ht mean={out['ht'].mean():.3f} "
                  f"sd={out['ht'].std():.3f}; hajek mean={np.nanmean(out['hajek']):.3f} "
                  f"sd={np.nanstd(out['hajek']):.3f}")


class TestTrialEstimates:
    def test_matches_scalar_plugin(self):
        inst = random_instance(np.random.default_rng(9), 25, 4)
        X = unconstrained_optimal_design(inst)
        for rng, _, kept in draw_trials(X, inst.costs, inst.budgets, "random", 100, 4):
            est = trial_estimates(inst, X, kept, rng)
        U = inst.utility.mu
        for t in range(100):
            W = np.zeros((25, 4))
            k = kept[t] >= 0
            W[np.flatnonzero(k), kept[t][k]] = 1
            assert est[t] == pytest.approx(plugin_estimator(W * U, inst.w1, inst.w0, X),
                                           rel=1e-12, abs=1e-12)

    def test_error_names_trial(self):
        inst = make_instance(np.ones((2, 2)), [5, 5], np.eye(2)[::-1], np.eye(2))
        kept = np.array([[0, -1], [0, 1]], dtype=np.intc)
        q = np.array([[0.5, 0.5], [0.5, 0.0]])
        with pytest.raises(EstimatorError, match="trial 1"):
            trial_estimates(inst, q, kept, rng_for(0))

    def test_unknown_kind(self):
        inst = make_instance(np.ones((1, 1)), [5], [[1]], [[1]])
        with pytest.raises(ValueError):
            trial_estimates(inst, np.ones((1, 1)), np.zeros((1, 1), np.intc), rng_for(0), "dm")


class TestClosedForms:
    def test_variance_single_item(self):
        inst = make_instance([[1, 1]], [5, 5], [[0, 1]], [[1, 0]])
        assert variance_closed_form(inst, [[0.5, 0.5]]) == pytest.approx(4.0)

    def test_variance_coincident_row(self):
        mu = 1.7
        inst = make_instance([[1, 1]], [5, 5], [[1, 0]], [[1, 0]], mu=[[mu, 1.0]])
        assert variance_closed_form(inst, [[1.0, 0.0]]) == pytest.approx(2 * mu**2)
        # the estimator itself is identically zero on such a row
        est = [plugin_estimator([[u, 0.0]], inst.w1, inst.w0, [[1.0, 0.0]]) for u in (mu, 2 * mu)]
        assert np.var(est) == 0

    def test_variance_matches_monte_carlo(self):
        rng = np.random.default_rng(10)
        n, m = 4, 30
        j1 = rng.integers(n, size=m)
        j0 = (j1 + 1 + rng.integers(n - 1, size=m)) % n
        base = random_instance(rng, m, n, slack="full")
        util = UtilityModel.lognormal(np.log(2) * one_hot(j1, n), 0.25)
        inst = ProblemInstance(base.costs, base.budgets * 10, one_hot(j0, n), one_hot(j1, n),
                               util)
        X = unconstrained_optimal_design(inst)
        est = np.concatenate([trial_estimates(inst, X, kept, rng) for rng, _, kept in
                              draw_trials(X, inst.costs, inst.budgets, "none", 100_000, 2)])
        assert est.var() == pytest.approx(variance_closed_form(inst, X), rel=0.05)

    def test_mse_bound_single_edge(self):
        inst = make_instance([[1.0]], [5.0], [[0]], [[1]])
        assert mse_upper_bound(inst, [[1.0]]) == pytest.approx(2.0)

    def test_bound_dominates_variance(self):
        for seed in range(10):
            inst = random_instance(np.random.default_rng(seed), 40, 5, slack="full")
            for X in (unconstrained_optimal_design(inst), 0.5 * (inst.w0 + inst.w1)):
                assert mse_upper_bound(inst, X) >= variance_closed_form(inst, X)

    def test_zero_on_support(self):
        inst = make_instance([[1, 1]], [5, 5], [[0, 1]], [[1, 0]])
        for fn in (variance_closed_form, mse_upper_bound):
            with pytest.raises(EstimatorError):
                fn(inst, [[0.5, 0.0]])
