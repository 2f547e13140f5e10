import logging

import numpy as np
import pytest

from netlasso import QuadraticObjective, SolverConfig, build_graph, solve
from netlasso.objectives import ProxError
from netlasso.regpath import PathConfig, detect_consensus, lambda_initial_heuristic, solve_path

from conftest import quadratic_graph, random_connected_quadratic

TIGHT = SolverConfig(eps_abs=1e-8, eps_rel=1e-8, max_iter=100_000)


class TestHeuristic:
    def test_quadratic_pair(self):
        a1, a2 = np.array([0.0, 0.0]), np.array([3.0, 4.0])
        g = quadratic_graph([(0, 1, 1.0)], [a1, a2])
        lam = lambda_initial_heuristic(g, np.stack([a1, a2]), samples=1)
        assert lam == pytest.approx(0.01 * 5.0, rel=1e-8)

    def test_degenerate_falls_back(self, caplog):
        g = quadratic_graph([(0, 1, 1.0)], [[1.0], [1.0]])
        with caplog.at_level(logging.WARNING):
            lam = lambda_initial_heuristic(g, np.array([[1.0], [1.0]]), samples=1)
        assert lam == 1e-3 and "falls back" in caplog.text

    def test_min_over_samples(self, rng):
        g, A = random_connected_quadratic(12, 2, rng)
        lam = lambda_initial_heuristic(g, A, samples=5, seed=3)
        sampled = np.sort(np.random.default_rng(3).choice(g.n, 5, replace=False))
        cands = []
        for e in sampled:
            i, j = g.edges[e]
            cands.append(0.01 * 2 * np.linalg.norm(A[i] - A[j]) / (2 * g.weights[e]))
        assert lam == pytest.approx(min(cands), rel=1e-6)
        assert all(lam <= c * (1 + 1e-6) for c in cands)


class TestPath:
    def test_edgeless(self, rng):
        A = rng.standard_normal((3, 2))
        path = solve_path(quadratic_graph([], A))
        assert len(path.points) == 2 and path.stop_reason == "unchanged"
        np.testing.assert_array_equal(path.points[0].result.x, path.points[1].result.x)

    def test_two_node_consensus(self):
        A = np.array([[1.0, 0.0], [0.0, 3.0]])
        g = quadratic_graph([(0, 1, 1.0)], A)
        path = solve_path(g, TIGHT)
        assert path.stop_reason == "consensus"
        np.testing.assert_allclose(path.points[-1].result.x, np.tile(A.mean(0), (2, 1)), atol=1e-6)
        np.testing.assert_allclose(path.consensus_x, A.mean(0), atol=1e-6)
        assert path.lambda_critical_est == path.points[-1].lam

    def test_lambdas_increase_geometrically(self, rng):
        g, _ = random_connected_quadratic(10, 2, rng)
        path = solve_path(g, pcfg=PathConfig(alpha=3.0))
        lams = path.lambdas
        assert lams[0] == 0.0 and all(b > a for a, b in zip(lams, lams[1:]))
        np.testing.assert_allclose(np.array(lams[2:]) / np.array(lams[1:-1]), 3.0)

    @pytest.mark.invariant
    def test_endpoint_clusters(self, rng):
        g, _ = random_connected_quadratic(10, 2, rng)
        path = solve_path(g)
        assert path.points[0].n_clusters == g.m
        assert path.stop_reason == "consensus" and path.points[-1].n_clusters == 1

    def test_override_and_cap(self, rng):
        g, _ = random_connected_quadratic(10, 2, rng)
        path = solve_path(g, pcfg=PathConfig(lambda_initial=0.05, max_lambdas=3))
        assert path.lambdas == [0.0, 0.05, 0.1] and path.stop_reason == "max_lambdas"
        assert path.lambda_critical_est is None

    def test_metric_and_callback(self, rng):
        g, _ = random_connected_quadratic(6, 2, rng)
        seen = []
        path = solve_path(g, metric=lambda lam, res: lam * 2, on_point=seen.append)
        assert [pt.metric for pt in path.points] == [2 * lam for lam in path.lambdas]
        assert len(seen) == len(path.points)

    def test_nonconvex_mode(self, rng):
        from netlasso import NonconvexConfig
        g, _ = random_connected_quadratic(6, 2, rng)
        path = solve_path(g, mode="nonconvex", ncfg=NonconvexConfig(fixed_iters=30),
                          pcfg=PathConfig(max_lambdas=5))
        assert all(pt.result.best_iter is not None for pt in path.points)

    def test_bad_mode(self, rng):
        g, _ = random_connected_quadratic(3, 1, rng)
        with pytest.raises(ValueError):
            solve_path(g, mode="annealed")

    def test_failure_recorded_and_cold_restart(self, rng, monkeypatch):
        g, _ = random_connected_quadratic(6, 2, rng)
        calls = []
        real = QuadraticObjective.prox_batch.__func__

        def flaky(cls, objs, V, sigma, tol=1e-6, scratch=None):
            calls.append(1)
            if 30 <= len(calls) < 32:
                raise ProxError("injected")
            return real(cls, objs, V, sigma, tol, scratch)

        monkeypatch.setattr(QuadraticObjective, "prox_batch", classmethod(flaky))
        warm_flags = []
        import netlasso.regpath as rp
        orig = rp.solve
        monkeypatch.setattr(rp, "solve", lambda g, lam, cfg, warm: (warm_flags.append(warm is None), orig(g, lam, cfg, warm))[1])
        path = solve_path(g)
        errs = [i for i, pt in enumerate(path.points) if pt.error]
        assert errs and "injected" in path.points[errs[0]].error
        assert path.points[errs[0]].result is None
        assert warm_flags[errs[0] + 1]  # next lambda starts cold


@pytest.mark.invariant
class TestConsensusDetection:
    def test_huge_lambda(self, rng):
        g, _ = random_connected_quadratic(8, 2, rng)
        assert detect_consensus(g, solve(g, 1e4, TIGHT))

    def test_lambda_zero(self, rng):
        g, _ = random_connected_quadratic(8, 2, rng)
        assert not detect_consensus(g, solve(g, 0.0))

    def test_agrees_with_pairwise_check_near_critical(self):
        # two nodes: consensus exactly when lam * w >= ||a1 - a2||, here 5
        A = np.array([[0.0, 0.0], [3.0, 4.0]])
        g = quadratic_graph([(0, 1, 1.0)], A)
        for lam in [4.5, 4.9, 5.1, 5.5]:
            res = solve(g, lam, TIGHT)
            pairwise = np.abs(res.x[0] - res.x[1]).max() <= 1e-6
            assert detect_consensus(g, res) == pairwise == (lam > 5)


@pytest.mark.invariant
def test_warm_start_saves_iterations():
    # statistical: warm-started points do not need more sweeps than cold ones
    rng = np.random.default_rng(0)
    g, _ = random_connected_quadratic(30, 3, rng, extra=20)
    path = solve_path(g, pcfg=PathConfig(alpha=1.5))
    pts = [pt for pt in path.points[2:] if pt.result is not None]
    wins = sum(pt.result.iterations <= solve(g, pt.lam).iterations for pt in pts)
    assert wins >= 0.8 * len(pts)
