import cvxpy as cp
import numpy as np
import pytest

from netlasso import QuadraticObjective, build_graph


def quadratic_graph(edges, A, m=None):
    A = np.atleast_2d(np.asarray(A, float))
    m = len(A) if m is None else m
    return build_graph(m, A.shape[1], edges, [QuadraticObjective(a) for a in A])


def random_connected_quadratic(m, p, rng, extra=5, wmax=2.0):
    """Random spanning tree plus a few chords, uniform weights in (0, wmax]."""
    edges = {}
    for i in range(1, m):
        j = int(rng.integers(i))
        edges[(j, i)] = float(rng.uniform(0.1, wmax))
    for _ in range(extra):
        j, k = sorted(rng.choice(m, 2, replace=False).tolist())
        edges.setdefault((j, k), float(rng.uniform(0.1, wmax)))
    A = rng.standard_normal((m, p))
    return quadratic_graph([(j, k, w) for (j, k), w in edges.items()], A), A


def cvxpy_reference(g, A, lam):
    """Conic-solver optimum of the quadratic network lasso: ``(value, X)``."""
    X = cp.Variable(A.shape)
    cost = cp.sum_squares(X - A)
    if g.n:
        D = np.zeros((g.n, g.m))
        D[np.arange(g.n), g.edges[:, 0]] = 1
        D[np.arange(g.n), g.edges[:, 1]] = -1
        cost += lam * cp.sum(cp.multiply(g.weights, cp.norm(D @ X, 2, axis=1)))
    prob = cp.Problem(cp.Minimize(cost))
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value, X.value


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def weber_reference(A, w):
    """Conic-solver optimum of ``sum w_k ||x - a_k||``: ``(value, x)``."""
    x = cp.Variable(A.shape[1])
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(w, cp.norm(A - cp.reshape(x, (1, A.shape[1]), order="C"), 2, axis=1)))))
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value, x.value


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def accept(request):
    """``accept(n, ok, detail)`` prints and records one criterion line, then
    asserts ``ok``. ``ok=None`` records a skip."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(n, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {n:>2}: {status}  {detail}"
        lines.append(line)
        with capman.global_and_fixture_disabled():
            print(f"\n{line}")
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
