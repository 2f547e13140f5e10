"""Values at held-out nodes: weighted geometric median of neighbor solutions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class WeberConvergenceWarning(RuntimeWarning):
    pass


@dataclass
class WeberInstance:
    anchors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if len(self.weights) == 0 or len(self.weights) != len(self.anchors):
            raise ValueError("need at least one anchor and one weight per anchor")
        if np.any(~(self.weights > 0)):
            raise ValueError("anchor weights must be positive")

    @classmethod
    def from_pairs(cls, pairs):
        pts, ws = zip(*pairs)
        return cls(np.stack([np.asarray(p, float) for p in pts]), np.asarray(ws, float))

    def objective(self, x):
        return float(self.weights @ np.linalg.norm(self.anchors - np.asarray(x, float), axis=1))


def _merge_duplicates(A, w):
    uniq, inv = np.unique(A, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    return uniq, np.bincount(inv, weights=w, minlength=len(uniq))


def _anchor_optimal(A, w, k):
    """Is anchor ``k`` a minimizer? Zero must lie in the subdifferential there."""
    diff = A - A[k]
    dist = np.linalg.norm(diff, axis=1)
    others = np.arange(len(A)) != k
    pull = (w[others, None] * diff[others] / dist[others, None]).sum(axis=0)
    return np.linalg.norm(pull) <= w[k], pull


def _cluster_certified(A, w, y, gap_tol):
    """Bound ``f(y) - min f`` by collapsing the anchors nearest ``y`` onto it.

    Moving a near set ``S`` onto ``y`` changes the objective by at most
    ``delta = sum_S w_k ||y - a_k||`` everywhere. If ``y`` then passes the
    anchor subgradient test, ``f(y) - min f <= 2 delta``.
    """
    diff = A - y
    dist = np.linalg.norm(diff, axis=1)
    order = np.argsort(dist, kind="stable")
    delta = 0.0
    for m in range(1, len(A)):
        near, far = order[:m], order[m:]
        delta += w[order[m - 1]] * dist[order[m - 1]]
        if 2 * delta > gap_tol:
            return False
        if np.any(dist[far] == 0):
            continue
        pull = (w[far, None] * diff[far] / dist[far, None]).sum(axis=0)
        if np.linalg.norm(pull) <= w[near].sum():
            return True
    return False


def weber_solve(inst: WeberInstance, tol=1e-8, max_iter=1000, return_info=False):
    """Minimize ``sum_k w_k ||x - a_k||``.

    One anchor returns it; two return the heavier one (midpoint on a tie).
    Otherwise anchors are first tested for optimality, then Weiszfeld
    iterations run from the weighted mean with a Newton polish.
    """
    A, w = _merge_duplicates(inst.anchors, inst.weights)
    info = {"iterations": 0, "converged": True}

    def done(x):
        return (x, info) if return_info else x

    if len(A) == 1:
        return done(A[0].copy())
    if len(A) == 2:
        if w[0] == w[1]:
            return done(0.5 * (A[0] + A[1]))
        return done(A[int(np.argmax(w))].copy())

    for k in np.argsort(-w, kind="stable"):
        if _anchor_optimal(A, w, k)[0]:
            return done(A[k].copy())

    x = (w @ A) / w.sum()
    scale = max(1.0, float(np.max(np.abs(A))))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        dist = np.linalg.norm(A - x, axis=1)
        if np.any(dist == 0):
            # landed on a non-optimal anchor: step off along the descent direction
            k = int(np.argmin(dist))
            _, pull = _anchor_optimal(A, w, k)
            x = A[k] + 1e-6 * scale * pull / np.linalg.norm(pull)
            continue
        coef = w / dist
        nxt = (coef @ A) / coef.sum()
        step = np.linalg.norm(nxt - x)
        x = nxt
        if step <= tol * scale:
            converged = True
            break
    x = _newton_polish(A, w, x, gtol=tol * w.sum())
    if not converged:
        # slow Weiszfeld tail near an anchor; accept if the polish reached stationarity
        dist = np.linalg.norm(x - A, axis=1)
        if np.all(dist > 0):
            grad = (w[:, None] * (x - A) / dist[:, None]).sum(axis=0)
            converged = bool(np.linalg.norm(grad) <= tol * w.sum())
        else:
            converged = bool(_anchor_optimal(A, w, int(np.argmin(dist)))[0])
    if not converged:
        # optimum inside a tight anchor cluster: certify an objective gap instead
        for y in (x, A[int(np.argmin(np.linalg.norm(x - A, axis=1)))]):
            if _cluster_certified(A, w, y, tol * scale * w.sum()):
                x, converged = y.copy(), True
                break
    info["iterations"] = it
    info["converged"] = converged
    if not converged:
        warnings.warn(f"Weber iteration stopped at max_iter={max_iter}", WeberConvergenceWarning)
    return done(x)


def _newton_polish(A, w, x, steps=50, gtol=0.0):
    """Damped Newton steps on the smooth objective away from anchors.

    Near the optimum the achievable decrease can drop below the round-off of
    the objective, so a step that ties in objective (to round-off) but
    shrinks the gradient is also accepted. Stops early once the gradient
    norm is at most ``gtol``.
    """
    f = lambda y: float(w @ np.linalg.norm(A - y, axis=1))
    p = A.shape[1]

    def grad_hess(y):
        diff = y - A
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist < 1e-14):
            return None, None
        u = diff / dist[:, None]
        H = np.einsum("k,kij->ij", w / dist, np.eye(p)[None] - u[:, :, None] * u[:, None, :])
        return (w[:, None] * u).sum(axis=0), H

    fx = f(x)
    grad, H = grad_hess(x)
    for _ in range(steps):
        if grad is None or np.linalg.norm(grad) <= gtol:
            break
        try:
            step = np.linalg.solve(H + 1e-15 * np.eye(p), grad)
        except np.linalg.LinAlgError:
            break
        slack = 4 * np.finfo(float).eps * abs(fx)
        t = 1.0
        while t > 1e-6:
            cand = x - t * step
            fc = f(cand)
            if fc < fx:
                break
            if fc <= fx + slack:
                gc, Hc = grad_hess(cand)
                if gc is not None and np.linalg.norm(gc) < np.linalg.norm(grad):
                    break
            t *= 0.5
        else:
            break
        x, fx = cand, fc
        grad, H = grad_hess(x)
    return x


def predict_node(x_train, neighbors, predictor=None, tol=1e-8, max_iter=1000):
    """Infer a new node's variable from ``(train_index, weight)`` neighbors and
    optionally map it through ``predictor``."""
    neighbors = list(neighbors)
    if not neighbors:
        raise ValueError("new node has no neighbors")
    idx = np.array([i for i, _ in neighbors], dtype=int)
    w = np.array([wt for _, wt in neighbors], dtype=float)
    x = weber_solve(WeberInstance(np.asarray(x_train)[idx], w), tol, max_iter)
    return x if predictor is None else predictor(x)
