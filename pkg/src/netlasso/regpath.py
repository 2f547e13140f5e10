"""Regularization path: warm-started solves over a geometric lambda grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .admm import SolverConfig, SolverResult, extract_clusters, solve
from .graph import ProblemGraph
from .nonconvex import NonconvexConfig, solve_nonconvex
from .objectives import ProxError

log = logging.getLogger(__name__)

FALLBACK_LAMBDA_INITIAL = 1e-3


@dataclass
class PathConfig:
    alpha: float = 2.0
    lambda_initial: float | None = None
    eps_path: float = 1e-6
    max_lambdas: int = 50
    heuristic_samples: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.lambda_initial is not None and not self.lambda_initial > 0:
            raise ValueError("lambda_initial must be positive")
        if not self.eps_path > 0:
            raise ValueError("eps_path must be positive")
        if self.max_lambdas < 2 or self.heuristic_samples < 1:
            raise ValueError("max_lambdas >= 2 and heuristic_samples >= 1 required")


@dataclass
class PathPoint:
    lam: float
    result: SolverResult | None
    clusters: np.ndarray | None
    metric: float | None = None
    error: str | None = None

    @property
    def n_clusters(self):
        return None if self.clusters is None else int(self.clusters.max()) + 1


@dataclass
class PathResult:
    points: list = field(default_factory=list)
    lambda_critical_est: float | None = None
    consensus_x: np.ndarray | None = None
    stop_reason: str = ""

    @property
    def lambdas(self):
        return [pt.lam for pt in self.points]


def lambda_initial_heuristic(g: ProblemGraph, x0, samples=5, seed=0):
    """Smallest of ``0.01 (||grad f_i|| + ||grad f_j||) / (2 w_ij)`` over sampled
    edges, gradients taken at the midpoint of the decoupled solutions."""
    if g.n == 0:
        log.warning("no edges to sample; lambda_initial falls back to %g", FALLBACK_LAMBDA_INITIAL)
        return FALLBACK_LAMBDA_INITIAL
    rng = np.random.default_rng(seed)
    picks = rng.choice(g.n, size=min(samples, g.n), replace=False)
    cands = []
    for e in np.sort(picks):
        i, j = g.edges[e]
        w = g.weights[e]
        if w <= 0:
            continue
        mid = 0.5 * (x0[i] + x0[j])
        gi = np.linalg.norm(g.objectives[i].gradient(mid))
        gj = np.linalg.norm(g.objectives[j].gradient(mid))
        cand = 0.01 * (gi + gj) / (2.0 * w)
        if cand > 0 and np.isfinite(cand):
            cands.append(cand)
    if not cands:
        log.warning("all sampled edges gave a zero candidate; lambda_initial falls back to %g",
                    FALLBACK_LAMBDA_INITIAL)
        return FALLBACK_LAMBDA_INITIAL
    return float(min(cands))


def detect_consensus(g: ProblemGraph, result: SolverResult, eps_path=1e-6) -> bool:
    """Every edge clamped to consensus and endpoint values agree.

    Agreement means a largest edge deviation within
    ``eps_path * max(1, max|x|)``, or within the final primal tolerance when
    the final primal residual passed its test: with all copies merged the
    endpoint gap is bounded by the primal residual, so tighter agreement is
    not resolvable.
    """
    if g.n == 0 or not np.all(result.consensus_edges):
        return False
    x = result.x
    dev = float(np.max(np.abs(x[g.edges[:, 0]] - x[g.edges[:, 1]])))
    tol = eps_path * max(1.0, float(np.max(np.abs(x))))
    if result.eps_pri and result.primal_residuals[-1] <= result.eps_pri[-1]:
        tol = max(tol, result.eps_pri[-1])
    return dev <= tol


def _relative_change(x, x_prev):
    return float(np.linalg.norm(x - x_prev) / max(1.0, np.linalg.norm(x_prev)))


def solve_path(g: ProblemGraph, cfg: SolverConfig | None = None, pcfg: PathConfig | None = None,
               mode="convex", ncfg: NonconvexConfig | None = None, metric=None, on_point=None):
    """Trace ``x*(lambda)`` from ``lambda = 0`` up to the estimated critical value.

    Parameters
    ----------
    mode : {"convex", "nonconvex"}
    metric : callable, optional
        ``metric(lam, result) -> float`` recorded on every path point.
    on_point : callable, optional
        Called with each :class:`PathPoint` as soon as it is solved.
    """
    cfg = cfg or SolverConfig()
    pcfg = pcfg or PathConfig()
    if mode == "convex":
        run = lambda lam, warm: solve(g, lam, cfg, warm)
    elif mode == "nonconvex":
        ncfg = ncfg or NonconvexConfig(base=cfg)
        run = lambda lam, warm: solve_nonconvex(g, lam, ncfg, warm)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    path = PathResult()

    def record(lam, res, err=None):
        if res is None:
            pt = PathPoint(lam, None, None, error=err)
        else:
            val = None if metric is None else float(metric(lam, res))
            pt = PathPoint(lam, res, extract_clusters(g, res), val)
        path.points.append(pt)
        if on_point is not None:
            on_point(pt)
        return pt

    first = run(0.0, None)
    record(0.0, first)
    lam = pcfg.lambda_initial
    if lam is None:
        lam = lambda_initial_heuristic(g, first.x, pcfg.heuristic_samples, pcfg.seed)
    prev = first
    while len(path.points) < pcfg.max_lambdas:
        try:
            res = run(lam, prev.state if prev is not None else None)
        except ProxError as err:
            log.warning("solve failed at lambda=%g (node %s): %s; next lambda starts cold", lam, err.node, err)
            record(lam, None, f"{type(err).__name__}: {err} (node {err.node})")
            prev = None
            lam *= pcfg.alpha
            continue
        record(lam, res)
        if detect_consensus(g, res, pcfg.eps_path):
            path.stop_reason = "consensus"
            break
        if prev is not None and _relative_change(res.x, prev.x) < pcfg.eps_path:
            path.stop_reason = "unchanged"
            break
        prev = res
        lam *= pcfg.alpha
    else:
        path.stop_reason = "max_lambdas"

    last = path.points[-1]
    if path.stop_reason in ("consensus", "unchanged"):
        path.lambda_critical_est = last.lam
    if path.stop_reason == "consensus":
        # one row per connected component; a single vector when connected
        labels = last.clusters
        means = np.stack([last.result.x[labels == c].mean(axis=0) for c in range(labels.max() + 1)])
        path.consensus_x = means[0] if len(means) == 1 else means
    return path
