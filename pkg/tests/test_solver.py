import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from budgetab import kernels
from budgetab.design import design_weights, unconstrained_optimal_design
from budgetab.solver import (SolverConfig, SolverError, grid_oracle, kkt_residual,
                             solve_separable)
from conftest import random_instance


def binding_problem(seed, m=60, n=6, scale=0.6):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, m, n)
    return design_weights(inst), inst.costs, scale * inst.budgets


def tiny_problem(rng):
    m, n = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    a = rng.uniform(0.2, 3, (m, n)) * (rng.random((m, n)) < 0.8)
    if not a.any():
        a[0, 0] = 1.0
    C = rng.uniform(0.5, 1.5, (m, n))
    b = rng.uniform(0.3, 1.5, n)
    return a, C, b


class TestSolveSeparable:
    def test_single_row_slack(self):
        a = np.array([[4.0, 1.0, 0.0, 9.0]])
        X, cert = solve_separable(a, np.ones_like(a), np.full(4, 10.0))
        np.testing.assert_array_equal(cert.budget_duals, 0)
        ref = np.sqrt(a) / np.sqrt(a).sum()
        np.testing.assert_allclose(X, ref, atol=1e-6)
        assert X[0, 2] == 0

    def test_symmetric(self):
        a = np.ones((4, 3))
        C = np.ones((4, 3))
        X, cert = solve_separable(a, C, np.full(3, 0.9))
        assert cert.converged
        np.testing.assert_allclose(X, X[:, ::-1], atol=1e-12)
        np.testing.assert_allclose(X, X[0].repeat(4).reshape(3, 4).T, atol=1e-12)

    def test_two_items_one_buyer(self):
        X, cert = solve_separable(np.full((2, 1), 2.0), np.ones((2, 1)), np.ones(1))
        np.testing.assert_allclose(X[:, 0], [0.5, 0.5], atol=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_against_grid(self, seed):
        a, C, b = tiny_problem(np.random.default_rng(seed))
        X, cert = solve_separable(a, C, b)
        _, f_grid = grid_oracle(a, C, b)
        assert cert.converged
        assert cert.objective <= f_grid + 1e-3

    @pytest.mark.parametrize("seed", range(5))
    def test_certificate(self, seed):
        a, C, b = binding_problem(seed)
        X, cert = solve_separable(a, C, b)
        assert cert.converged and cert.kkt_residual <= 1e-7
        assert np.all(cert.budget_duals >= 0) and np.all(cert.row_duals >= 0)
        assert cert.budget_duals.max() > 0
        # weak duality
        assert cert.dual_objective <= cert.objective * (1 + 1e-12)
        assert cert.relative_gap <= 1e-4
        # primal feasibility
        supp = a > 0
        assert np.all(X.sum(1) <= 1 + 1e-9)
        assert np.all((C * X).sum(0) <= b + 1e-9)
        assert np.all(X[supp] >= 1e-6) and np.all(X <= 1)
        np.testing.assert_array_equal(X[~supp], 0)
        # dual values never decrease over accepted iterations
        h = np.array(cert.history)
        assert np.all(np.diff(h) >= -1e-12 * np.abs(h[1:]))
        d = cert.to_dict()
        assert d["converged"] and len(d["budget_duals"]) == a.shape[1]
        assert '"kkt_residual"' in cert.to_json()

    def test_scaling_covariance(self):
        a, C, b = binding_problem(11)
        X1, c1 = solve_separable(a, C, b)
        X2, c2 = solve_separable(7.5 * a, C, b)
        np.testing.assert_allclose(X1, X2, atol=1e-6)
        assert c2.objective == pytest.approx(7.5 * c1.objective, rel=1e-9)

    def test_deterministic_and_backends_identical(self):
        a, C, b = binding_problem(4)
        outs = []
        prev = kernels.backend()
        for name in kernels.available_backends():
            kernels.use_backend(name)
            outs.append(solve_separable(a, C, b)[0])
            outs.append(solve_separable(a, C, b)[0])
        kernels.use_backend(prev)
        for X in outs[1:]:
            np.testing.assert_array_equal(X, outs[0])

    def test_coordinate_matches_newton(self):
        a, C, b = binding_problem(2, m=30, n=4)
        Xn, cn = solve_separable(a, C, b)
        Xc, cc = solve_separable(a, C, b, SolverConfig(dual_step="coordinate", max_iterations=2000))
        assert cc.converged
        np.testing.assert_allclose(Xn, Xc, atol=1e-6)

    def test_warm_start_invariance(self):
        a, C, b = binding_problem(6)
        X0, c0 = solve_separable(a, C, b)
        X1, c1 = solve_separable(a, C, b, warm_start=c0.budget_duals * 1.3 + 0.1)
        np.testing.assert_allclose(X0, X1, atol=1e-6)
        assert c1.objective == pytest.approx(c0.objective, rel=1e-9)

    def test_iteration_cap_reports_failure(self):
        a, C, b = binding_problem(1)
        X, cert = solve_separable(a, C, b, SolverConfig(max_iterations=1, dual_step="coordinate"))
        assert not cert.converged
        assert X.shape == a.shape

    def test_floor_infeasible(self):
        with pytest.raises(SolverError, match="infeasible"):
            solve_separable(np.ones((3, 1)), np.ones((3, 1)), np.array([1e-7]))

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            solve_separable(np.zeros((2, 2)), np.ones((2, 2)), np.ones(2))
        with pytest.raises(ValueError):
            solve_separable(-np.ones((2, 2)), np.ones((2, 2)), np.ones(2))

    def test_config_validation(self):
        for bad in ({"kkt_tolerance": 0}, {"eps_floor": 1.0}, {"max_iterations": 0},
                    {"dual_step": "adam"}):
            with pytest.raises(ValueError):
                SolverConfig(**bad)

    def test_matches_conic_solver(self):
        cp = pytest.importorskip("cvxpy")
        a, C, b = binding_problem(9, m=40, n=5)
        X, cert = solve_separable(a, C, b)
        supp = a > 0
        x = cp.Variable(a.shape)
        mask = supp.astype(float)
        obj = cp.sum(cp.multiply(a[supp], cp.inv_pos(x[supp])))
        cons = [x >= 1e-6 * mask, x <= mask, cp.sum(x, axis=1) <= 1,
                cp.sum(cp.multiply(C, x), axis=0) <= b]
        prob = cp.Problem(cp.Minimize(obj), cons)
        prob.solve()
        assert cert.objective <= prob.value * (1 + 1e-6)
        assert cert.objective == pytest.approx(prob.value, rel=1e-5)
        np.testing.assert_allclose(X, x.value, atol=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_property_feasible_and_certified(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 5, (8, 3)) * (rng.random((8, 3)) < 0.6)
        if not a.any():
            a[0, 0] = 1
        C = rng.uniform(0.1, 2, (8, 3))
        b = rng.uniform(0.05, 4, 3)
        X, cert = solve_separable(a, C, b)
        assert cert.converged
        assert np.all((C * X).sum(0) <= b + 1e-9)
        assert np.all(X.sum(1) <= 1 + 1e-9)


class TestKKTResidual:
    def test_exact_point(self):
        a = np.array([[4.0, 1.0]])
        x = np.array([[2 / 3, 1 / 3]])
        r = kkt_residual(x, a, np.ones((1, 2)), np.full(2, 5.0), (np.array([9.0]), np.zeros(2)))
        assert r <= 1e-12

    @pytest.mark.parametrize("delta", [1e-6, 1e-4, 1e-2])
    def test_perturbation(self, delta):
        a = np.array([[4.0, 1.0]])
        x = np.array([[2 / 3, 1 / 3 - delta]])
        r = kkt_residual(x, a, np.ones((1, 2)), np.full(2, 5.0), (np.array([9.0]), np.zeros(2)))
        assert r >= 0.5 * delta

    def test_solver_output(self):
        a, C, b = binding_problem(3)
        X, cert = solve_separable(a, C, b, SolverConfig(kkt_tolerance=1e-8))
        assert kkt_residual(X, a, C, b, (cert.row_duals, cert.budget_duals)) <= 1e-8

    def test_negative_dual_flagged(self):
        a = np.array([[1.0]])
        r = kkt_residual([[1.0]], a, [[1.0]], [2.0], (np.array([1.0]), np.array([-0.5])))
        assert r >= 0.5


class TestGridOracle:
    def test_single_cell(self):
        x, f = grid_oracle([[1.0]], [[1.0]], [0.5])
        assert x[0, 0] == pytest.approx(0.5) and f == pytest.approx(2.0)

    def test_symmetric_row(self):
        x, f = grid_oracle([[1.0, 1.0]], [[1.0, 1.0]], [5.0, 5.0])
        np.testing.assert_allclose(x, [[0.5, 0.5]])

    def test_exact_on_one_cell(self):
        # the single entry is pushed to the largest feasible lattice value
        x, f = grid_oracle([[2.0]], [[1.3]], [0.8])
        assert x[0, 0] == pytest.approx(0.615)

    def test_tight_budget_below_coarse_lattice(self):
        x, f = grid_oracle(np.ones((3, 2)), np.ones((3, 2)), np.array([0.06, 0.06]))
        assert np.isfinite(f) and np.all(x > 0)

    def test_size_cap(self):
        with pytest.raises(ValueError):
            grid_oracle(np.ones((3, 3)), np.ones((3, 3)), np.ones(3))

    @pytest.mark.parametrize("seed", range(10, 20))
    def test_cross_validation(self, seed):
        a, C, b = tiny_problem(np.random.default_rng(seed))
        X, cert = solve_separable(a, C, b)
        _, f = grid_oracle(a, C, b, resolution=1e-4)
        assert cert.objective <= f
        assert cert.objective == pytest.approx(f, rel=1e-3)


def test_unconstrained_matches_single_row_solve():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 1, 4, slack="full")
    X, _ = solve_separable(design_weights(inst), inst.costs, inst.budgets * 10)
    np.testing.assert_allclose(X, unconstrained_optimal_design(inst), atol=1e-6)
