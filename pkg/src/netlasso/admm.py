"""Convex network lasso solved by edge-copy ADMM.

Each edge ``(j, k)`` holds a copy of both endpoint variables (``z_jk``,
``z_kj``) and their scaled duals. One iteration is a bulk-synchronous
sweep: node prox updates, then the closed-form joint update of both edge
copies, then the dual step.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
import scipy.sparse as sp

from .graph import ADMMState, ProblemGraph
from .objectives import DEFAULT_TOL_PROX, ProxError

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    rho: float = 1.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-3
    max_iter: int = 1000
    tol_prox: float = DEFAULT_TOL_PROX
    workers: int = 1
    deterministic: bool = True

    def __post_init__(self):
        for name in ("rho", "eps_abs", "eps_rel", "tol_prox"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValueError("workers must be a positive integer")

    @classmethod
    def default_workers(cls):
        return int(os.environ.get("NETLASSO_WORKERS", "1"))


@dataclass
class EdgeUpdateResult:
    """Per-edge interpolation weight; ``consensus`` marks the clamped branch."""

    theta: np.ndarray
    consensus: np.ndarray


@dataclass
class SolverResult:
    x: np.ndarray
    iterations: int
    primal_residuals: list
    dual_residuals: list
    converged: bool
    objective: float
    consensus_edges: np.ndarray
    theta: np.ndarray
    state: ADMMState
    lam: float
    eps_pri: list = field(default_factory=list)
    eps_dual: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    best_iter: int | None = None


# -- single steps -------------------------------------------------------------

def z_update(a, b, c, rho):
    """Jointly minimize ``c||z1 - z2|| + rho/2 (||a - z1||^2 + ||b - z2||^2)``.

    ``a = x_j + u_jk`` and ``b = x_k + u_kj``; ``c = lambda * w_jk``. Works on one
    edge (1-D ``a``, ``b``) or a stack of edges (rows). Returns
    ``(z_jk, z_kj, EdgeUpdateResult)``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    d = np.linalg.norm(a - b, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = 1.0 - c / (rho * d)
    consensus = (d == 0) | ~(theta > 0.5)
    theta = np.where(consensus, 0.5, theta)
    t = theta[..., None]
    z_jk = t * a + (1.0 - t) * b
    z_kj = (1.0 - t) * a + t * b
    return z_jk, z_kj, EdgeUpdateResult(theta, consensus)


def u_update(u, x_copies, z):
    """Scaled dual ascent ``u + (x - z)`` on every edge half."""
    return u + (x_copies - z)


def residuals(x_copies, z, z_prev, u, rho, eps_abs, eps_rel):
    """Primal/dual residual norms and their stopping thresholds.

    All arrays are stacked over the ``2n`` directed edge halves.
    """
    r = np.linalg.norm((x_copies - z).ravel())
    s = rho * np.linalg.norm((z - z_prev).ravel())
    root = np.sqrt(z.size) * eps_abs
    eps_pri = root + eps_rel * max(np.linalg.norm(x_copies.ravel()), np.linalg.norm(z.ravel()))
    eps_dual = root + eps_rel * rho * np.linalg.norm(u.ravel())
    return float(r), float(s), float(eps_pri), float(eps_dual)


def node_objectives(g: ProblemGraph, x) -> np.ndarray:
    out = np.empty(g.m)
    for cls, idx, objs in g.groups():
        out[idx] = cls.evaluate_batch(objs, x[idx])
    return out


def edge_lengths(g: ProblemGraph, x) -> np.ndarray:
    if g.n == 0:
        return np.zeros(0)
    return np.linalg.norm(x[g.edges[:, 0]] - x[g.edges[:, 1]], axis=1)


def network_lasso_objective(g: ProblemGraph, x, lam) -> float:
    """``sum_i f_i(x_i) + lam * sum_jk w_jk ||x_j - x_k||``."""
    return float(node_objectives(g, x).sum() + lam * (g.weights @ edge_lengths(g, x)))


def minimizers(g: ProblemGraph, idx=None, tol=1e-9) -> np.ndarray:
    """Per-node minimizers of ``f_i`` (rows for ``idx``, default all nodes)."""
    idx = np.arange(g.m) if idx is None else np.asarray(idx)
    want = np.zeros(g.m, bool)
    want[idx] = True
    out = np.zeros((g.m, g.p))
    for cls, gidx, objs in g.groups():
        sel = want[gidx]
        if sel.any():
            sub = [o for o, keep in zip(objs, sel) if keep]
            out[gidx[sel]] = cls.minimize_batch(sub, tol)
    return out[idx]


class _Sweeper:
    """Owns the per-solve scratch (prox warm starts, worker pool) of a graph."""

    def __init__(self, g: ProblemGraph, cfg: SolverConfig):
        self.g = g
        self.cfg = cfg
        self.deg = g.degree
        self.sigma = cfg.rho * self.deg
        bj, bk = g.incidence()
        self.bj, self.bk = bj, bk
        self.isolated = np.flatnonzero(self.deg == 0)
        self.x_isolated = minimizers(g, self.isolated) if self.isolated.size else None
        self.pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        # (class, node indices, objectives, scratch) per worker chunk
        self.tasks = []
        for cls, idx, objs in g.groups():
            keep = self.deg[idx] > 0
            idx = idx[keep]
            objs = [o for o, k in zip(objs, keep) if k]
            if not idx.size:
                continue
            for part in np.array_split(np.arange(idx.size), min(cfg.workers, idx.size)):
                self.tasks.append((cls, idx[part], [objs[i] for i in part], {}))
        self.edge_chunks = [c for c in np.array_split(np.arange(g.n), cfg.workers) if c.size]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(it) for it in items]
        return list(self.pool.map(fn, items))

    def x_update(self, state: ADMMState) -> np.ndarray:
        g = self.g
        x = np.empty((g.m, g.p))
        if g.n:
            S = self.bj @ (state.z[:, 0] - state.u[:, 0]) + self.bk @ (state.z[:, 1] - state.u[:, 1])
        else:
            S = np.zeros((g.m, g.p))

        def run(task):
            cls, idx, objs, scratch = task
            V = S[idx] / self.deg[idx][:, None]
            try:
                return cls.prox_batch(objs, V, self.sigma[idx], self.cfg.tol_prox, scratch)
            except ProxError as err:
                worst = int(np.argmax(scratch.get("residual", np.zeros(len(idx)))))
                err.node = int(idx[worst])
                raise

        for (_, idx, _, _), out in zip(self.tasks, self._map(run, self.tasks)):
            x[idx] = out
        if self.isolated.size:
            x[self.isolated] = self.x_isolated
        return x

    def edge_update(self, x, state: ADMMState, z_step):
        """z then u on every edge; ``z_step(a, b, idx)`` returns (z_jk, z_kj, theta, consensus)."""
        g = self.g
        X2 = x[g.edges]
        z = np.empty_like(state.z)
        theta = np.empty(g.n)
        cons = np.empty(g.n, bool)

        def run(idx):
            a = X2[idx, 0] + state.u[idx, 0]
            b = X2[idx, 1] + state.u[idx, 1]
            return z_step(a, b, idx)

        for idx, (zjk, zkj, th, cn) in zip(self.edge_chunks, self._map(run, self.edge_chunks)):
            z[idx, 0], z[idx, 1] = zjk, zkj
            theta[idx], cons[idx] = th, cn
        u = u_update(state.u, X2, z)
        return X2, ADMMState(x, z, u), theta, cons


def _initial_state(g, lam, warm):
    if warm is not None:
        state = warm.copy()
        state.check(g)
        return state
    state = ADMMState.zeros(g)
    if lam == 0:
        # decoupled problem: start at the known fixed point
        state.x = minimizers(g)
        state.z = state.x[g.edges].copy()
    return state


def run_admm(g, lam, cfg, warm, z_step, iters, stop_on_residuals, penalty, track_best, trace):
    """Shared iteration driver for the convex and non-convex solvers."""
    state = _initial_state(g, lam, warm)
    sweeper = _Sweeper(g, cfg)
    hist_r, hist_s, hist_ep, hist_ed, hist_obj = [], [], [], [], []
    theta = np.ones(g.n)
    cons = np.zeros(g.n, bool)
    best = None
    converged = False
    writer = None
    if trace is not None:
        writer = csv.writer(trace, lineterminator="\n")
        header = ["iter", "r_norm", "s_norm", "eps_pri", "eps_dual", "objective"]
        writer.writerow(header + (["best_iter"] if track_best else []))
    it = 0
    try:
        for it in range(1, iters + 1):
            x = sweeper.x_update(state)
            z_prev = state.z
            X2, state, theta, cons = sweeper.edge_update(x, state, z_step)
            r, s, ep, ed = residuals(X2, state.z, z_prev, state.u, cfg.rho, cfg.eps_abs, cfg.eps_rel)
            hist_r.append(r)
            hist_s.append(s)
            hist_ep.append(ep)
            hist_ed.append(ed)
            if track_best or writer is not None:
                obj = float(node_objectives(g, x).sum() + lam * (g.weights @ penalty(edge_lengths(g, x))))
                hist_obj.append(obj)
                if track_best and (best is None or obj < best[0]):
                    best = (obj, it, state.copy(), theta.copy(), cons.copy())
                if writer is not None:
                    row = [it, repr(r), repr(s), repr(ep), repr(ed), repr(obj)]
                    writer.writerow(row + ([best[1]] if track_best else []))
            if stop_on_residuals and r <= ep and s <= ed:
                converged = True
                break
    finally:
        sweeper.close()

    best_iter = None
    if track_best and best is not None:
        _, best_iter, state, theta, cons = best
    x = state.x
    objective = float(node_objectives(g, x).sum() + lam * (g.weights @ penalty(edge_lengths(g, x))))
    return SolverResult(
        x=x.copy(),
        iterations=it,
        primal_residuals=hist_r,
        dual_residuals=hist_s,
        converged=converged,
        objective=objective,
        consensus_edges=cons,
        theta=theta,
        state=state,
        lam=float(lam),
        eps_pri=hist_ep,
        eps_dual=hist_ed,
        objectives=hist_obj,
        best_iter=best_iter,
    )


def solve(g: ProblemGraph, lam, cfg: SolverConfig | None = None, warm: ADMMState | None = None, trace=None):
    """Solve the network lasso at one ``lam`` (``>= 0``).

    Parameters
    ----------
    warm : ADMMState, optional
        Prior ``(x, z, u)`` to start from; copied, never mutated. Without it
        the state starts at zero, except at ``lam = 0`` where the decoupled
        per-node minimizers are used.
    trace : text file, optional
        Receives one CSV row per iteration.
    """
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    cfg = cfg or SolverConfig()
    c_all = lam * g.weights

    def z_step(a, b, idx):
        zjk, zkj, info = z_update(a, b, c_all[idx], cfg.rho)
        return zjk, zkj, info.theta, info.consensus

    res = run_admm(g, lam, cfg, warm, z_step, cfg.max_iter, True, lambda d: d, False, trace)
    if res.converged and not np.isfinite(res.objective):
        raise InfeasibleError("objective is infinite at the converged iterate")
    if not res.converged:
        log.info("ADMM hit max_iter=%d at lambda=%g (r=%.3g, s=%.3g)",
                 cfg.max_iter, lam, res.primal_residuals[-1], res.dual_residuals[-1])
    return res


def extract_clusters(g: ProblemGraph, result: SolverResult) -> np.ndarray:
    """Connected components over consensus edges; ids ordered by smallest member."""
    mask = np.asarray(result.consensus_edges, bool)
    e = g.edges[mask]
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.m, g.m))
    _, labels = connected_components(adj, directed=False)
    first = {}
    out = np.empty(g.m, dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = first.setdefault(lab, len(first))
    return out


def x_update(g: ProblemGraph, state: ADMMState, cfg: SolverConfig | None = None) -> np.ndarray:
    """One node sweep: ``x_i = prox_{f_i}(mean_j(z_ij - u_ij), rho * deg(i))``."""
    sweeper = _Sweeper(g, cfg or SolverConfig())
    try:
        return sweeper.x_update(state)
    finally:
        sweeper.close()
