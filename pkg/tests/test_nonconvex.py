import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netlasso import NonconvexConfig, PhiLog, SolverConfig, solve, solve_nonconvex, z_update_log
from netlasso.nonconvex import log_edge_objective, nonconvex_objective

from conftest import random_connected_quadratic


class TestPhiLog:
    def test_shape(self):
        phi = PhiLog(2.0)
        u = np.linspace(0, 10, 101)
        v = phi(u)
        assert phi(0.0) == 0.0
        assert np.all(np.diff(v) >= 0)
        assert np.all(np.diff(v, 2) <= 1e-15)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            PhiLog(0.0)


class TestZUpdateLog:
    def test_no_penalty(self):
        a, b = np.array([1.0, 2.0]), np.array([0.0, -1.0])
        zjk, zkj, theta = z_update_log(a, b, 0.0, 1.0, 1.0)
        assert theta == 0.0
        np.testing.assert_array_equal(zjk, a)
        np.testing.assert_array_equal(zkj, b)

    def test_coincident(self):
        a = np.array([0.5, 0.5])
        zjk, zkj, theta = z_update_log(a, a, 3.0, 1.0, 1.0)
        assert theta == 0.5
        np.testing.assert_array_equal(zjk, a)
        np.testing.assert_array_equal(zkj, a)

    def test_worked_instance(self):
        a, b = np.array([2.0]), np.array([0.0])
        zjk, zkj, theta = z_update_log(a, b, 1.0, 1.0, 1.0)
        assert theta == 0.25
        assert np.linalg.norm(zjk - zkj) == 1.0
        np.testing.assert_allclose(log_edge_objective(0.25, 2.0, 1.0, 1.0, 1.0), np.log(2) + 0.25)
        assert log_edge_objective(0.5, 2.0, 1.0, 1.0, 1.0) == 1.0

    def test_negative_discriminant(self):
        zjk, zkj, theta = z_update_log(np.array([1.0]), np.array([0.0]), 100.0, 1.0, 1.0)
        assert theta == 0.5
        np.testing.assert_array_equal(zjk, zkj)

    @pytest.mark.parametrize("rho,eps", [(0.0, 1.0), (1.0, 0.0)])
    def test_bad_parameters(self, rho, eps):
        with pytest.raises(ValueError):
            z_update_log(np.ones(1), np.zeros(1), 1.0, rho, eps)

    @pytest.mark.invariant
    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(0, 10), rho=st.floats(0.05, 20), eps=st.floats(0.01, 10))
    def test_bounds_and_conservation(self, seed, c, rho, eps):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 6, 3)) * rng.uniform(0.01, 5)
        zjk, zkj, theta = z_update_log(a, b, np.full(6, c), rho, eps)
        assert np.all((theta >= 0) & (theta <= 0.5))
        np.testing.assert_allclose(zjk + zkj, a + b, rtol=0, atol=1e-12 * (1 + np.abs(a + b).max()))

    @pytest.mark.invariant
    def test_grid_oracle_spot(self, rng):
        grid = np.arange(0, 0.5 + 5e-6, 1e-5)
        for _ in range(50):
            a, b = rng.standard_normal((2, 3)) * 2
            c, rho, eps = rng.uniform(0, 5), rng.uniform(0.1, 10), rng.uniform(0.1, 3)
            _, _, theta = z_update_log(a, b, c, rho, eps)
            d = np.linalg.norm(a - b)
            best = log_edge_objective(grid, d, c, rho, eps).min()
            assert log_edge_objective(theta, d, c, rho, eps) <= best + 1e-4


class TestSolveNonconvex:
    def test_lambda_zero_matches_convex(self, rng):
        g, A = random_connected_quadratic(6, 2, rng)
        np.testing.assert_allclose(solve_nonconvex(g, 0.0, NonconvexConfig(fixed_iters=20)).x, solve(g, 0.0).x)

    def test_runs_fixed_iterations(self, rng):
        g, _ = random_connected_quadratic(6, 2, rng)
        res = solve_nonconvex(g, 0.5, NonconvexConfig(fixed_iters=37))
        assert res.iterations == 37 and not res.converged
        assert 1 <= res.best_iter <= 37

    @pytest.mark.invariant
    def test_best_never_worse_than_last(self, rng):
        g, _ = random_connected_quadratic(10, 2, rng)
        res = solve_nonconvex(g, 0.7, NonconvexConfig(fixed_iters=60))
        assert res.objective <= res.objectives[-1] + 1e-12
        assert res.objective == pytest.approx(min(res.objectives))
        assert res.objective == pytest.approx(nonconvex_objective(g, res.x, 0.7, 1.0))

    @pytest.mark.invariant
    def test_best_objective_monotone_in_horizon(self, rng):
        g, _ = random_connected_quadratic(10, 2, rng)
        res = solve_nonconvex(g, 0.7, NonconvexConfig(fixed_iters=80))
        running = np.minimum.accumulate(res.objectives)
        assert np.all(np.diff(running) <= 0)

    def test_trace_has_best_iter(self, rng):
        import io
        g, _ = random_connected_quadratic(5, 2, rng)
        buf = io.StringIO()
        solve_nonconvex(g, 0.3, NonconvexConfig(fixed_iters=5), trace=buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].endswith(",best_iter") and len(lines) == 6

    def test_small_lambda_snapshot(self):
        # regression snapshot: log penalty objective after best tracking versus
        # the convex solution scored under the log penalty
        rng = np.random.default_rng(7)
        g, _ = random_connected_quadratic(10, 2, rng)
        lam = 0.2
        cvx = solve(g, lam, SolverConfig(eps_abs=1e-8, eps_rel=1e-8, max_iter=100_000))
        ncv = solve_nonconvex(g, lam, NonconvexConfig(fixed_iters=500))
        assert ncv.objective <= nonconvex_objective(g, cvx.x, lam, 1.0) + 1e-6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NonconvexConfig(fixed_iters=0)
