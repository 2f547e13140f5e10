"""Network lasso with a concave edge penalty ``phi(||x_j - x_k||)``.

Only the z-update changes relative to the convex solver. ADMM carries no
convergence guarantee here, so each solve runs a fixed number of sweeps and
returns the iterate with the lowest true objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admm import SolverConfig, SolverResult, edge_lengths, node_objectives, run_admm
from .graph import ADMMState, ProblemGraph


@dataclass(frozen=True)
class PhiLog:
    """``phi(u) = log(1 + u / eps_log)``."""

    eps_log: float = 1.0

    def __post_init__(self):
        if not self.eps_log > 0:
            raise ValueError("eps_log must be positive")

    def __call__(self, u):
        return np.log1p(np.asarray(u, dtype=float) / self.eps_log)


@dataclass
class NonconvexConfig:
    base: SolverConfig = field(default_factory=SolverConfig)
    fixed_iters: int = 500
    eps_log: float = 1.0

    def __post_init__(self):
        if int(self.fixed_iters) != self.fixed_iters or self.fixed_iters < 1:
            raise ValueError("fixed_iters must be a positive integer")
        if not self.eps_log > 0:
            raise ValueError("eps_log must be positive")


def log_edge_objective(theta, d, c, rho, eps_log):
    """The 1-D reduced z-subproblem ``c log(1 + d(1-2t)/eps) + rho d^2 t^2``."""
    return c * np.log1p(d * (1.0 - 2.0 * theta) / eps_log) + rho * d * d * theta * theta


def z_update_log(a, b, c, rho, eps_log):
    """Edge-copy update under the log penalty.

    Candidates are the consensus point ``theta = 1/2`` and the real roots of
    ``2 rho d^2 t^2 - rho d (d + eps) t + c = 0`` lying in ``[0, 1/2)``; the
    one with the lowest reduced objective wins. Returns
    ``(z_jk, z_kj, theta)`` with ``z_jk = (1-theta) a + theta b``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not eps_log > 0:
        raise ValueError("eps_log must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), a.shape[:-1])
    d = np.linalg.norm(a - b, axis=-1)

    disc = rho * rho * (d + eps_log) ** 2 - 8.0 * rho * c
    root = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = (rho * (d + eps_log) - root) / (4.0 * rho * d)
        hi = (rho * (d + eps_log) + root) / (4.0 * rho * d)
    half = np.full(d.shape, 0.5)
    cands = np.stack([half, lo, hi], axis=-1)
    ok = np.stack([np.ones(d.shape, bool), disc >= 0, disc >= 0], axis=-1)
    ok &= (cands >= 0.0) & (cands < 0.5) | (np.arange(3) == 0)
    ok &= (d > 0)[..., None] | (np.arange(3) == 0)
    safe = np.where(ok, cands, 0.5)
    vals = log_edge_objective(safe, d[..., None], c[..., None], rho, eps_log)
    vals = np.where(ok, vals, np.inf)
    theta = np.take_along_axis(safe, np.argmin(vals, axis=-1)[..., None], axis=-1)[..., 0]

    t = theta[..., None]
    z_jk = (1.0 - t) * a + t * b
    z_kj = t * a + (1.0 - t) * b
    return z_jk, z_kj, theta


def nonconvex_objective(g: ProblemGraph, x, lam, eps_log) -> float:
    phi = PhiLog(eps_log)
    return float(node_objectives(g, x).sum() + lam * (g.weights @ phi(edge_lengths(g, x))))


def solve_nonconvex(g: ProblemGraph, lam, cfg: NonconvexConfig | None = None,
                    warm: ADMMState | None = None, trace=None) -> SolverResult:
    """Run ``cfg.fixed_iters`` sweeps and return the best iterate seen.

    ``result.converged`` is always False; ``result.best_iter`` names the
    sweep whose iterate was returned.
    """
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    cfg = cfg or NonconvexConfig()
    base = cfg.base
    phi = PhiLog(cfg.eps_log)
    c_all = lam * g.weights

    def z_step(a, b, idx):
        zjk, zkj, theta = z_update_log(a, b, c_all[idx], base.rho, cfg.eps_log)
        return zjk, zkj, theta, theta == 0.5

    return run_admm(g, lam, base, warm, z_step, cfg.fixed_iters, False, phi, True, trace)
