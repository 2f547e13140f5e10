"""Node objectives exposed through a scaled proximal operator.

Every objective answers ``prox(v, sigma) = argmin_x f(x) + (sigma/2)||x - v||^2``.
The solver calls the batched classmethods (``prox_batch`` and friends) on
groups of same-shaped objectives; the per-node methods are thin wrappers.
"""

from __future__ import annotations

import numpy as np

from ._kernels import svm_dual_cd

DEFAULT_TOL_PROX = 1e-6


class ProxError(RuntimeError):
    """Iterative prox failed to reach its tolerance.

    ``best`` holds the last iterate and ``residual`` its optimality residual.
    ``node`` is filled in by the solver when the failing node is known.
    """

    def __init__(self, message, best=None, residual=None, node=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.node = node


def _check_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")
    return sigma


class NodeObjective:
    """Convex node cost ``f: R^p -> R``.

    Subclasses implement the batched hooks; by default they fall back to
    per-node loops so a new objective only needs ``evaluate`` and ``prox``.
    """

    dim: int

    def evaluate(self, x) -> float:
        raise NotImplementedError

    def prox(self, v, sigma, tol=DEFAULT_TOL_PROX):
        out = type(self).prox_batch([self], np.asarray(v, float)[None], np.array([sigma], float), tol)
        return out[0]

    def minimize(self, tol=1e-9):
        """A minimizer of ``f`` (used for isolated nodes and lambda = 0)."""
        return type(self).minimize_batch([self], tol)[0]

    def gradient(self, x, step=1e-6):
        """Central finite-difference gradient; overridden where smooth."""
        x = np.asarray(x, dtype=float)
        g = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = step
            g[i] = (self.evaluate(x + e) - self.evaluate(x - e)) / (2 * step)
        return g

    def batch_key(self):
        """Objectives with equal keys may be stacked into one batch call."""
        return (type(self), self.dim)

    @classmethod
    def prox_batch(cls, objs, V, sigma, tol=DEFAULT_TOL_PROX, scratch=None):
        sigma = _check_sigma(sigma)
        return np.stack([o.prox(v, s, tol) for o, v, s in zip(objs, V, sigma)])

    @classmethod
    def evaluate_batch(cls, objs, X):
        return np.array([o.evaluate(x) for o, x in zip(objs, X)], dtype=float)

    @classmethod
    def minimize_batch(cls, objs, tol=1e-9):
        """Proximal-point iteration ``x <- prox(x, 1)`` to a fixed point."""
        X = np.zeros((len(objs), objs[0].dim))
        ones = np.ones(len(objs))
        scratch = {}
        for _ in range(100_000):
            nxt = cls.prox_batch(objs, X, ones, tol=tol * 1e-2, scratch=scratch)
            step = np.max(np.abs(nxt - X)) if len(X) else 0.0
            X = nxt
            if step <= tol:
                return X
        raise ProxError("proximal-point minimization did not converge", best=X, residual=step)


class ZeroObjective(NodeObjective):
    """``f = 0``; used for inference dummy nodes and as the graph default."""

    def __init__(self, dim):
        self.dim = int(dim)

    def evaluate(self, x):
        return 0.0

    def gradient(self, x, step=None):
        return np.zeros(self.dim)

    @classmethod
    def prox_batch(cls, objs, V, sigma, tol=DEFAULT_TOL_PROX, scratch=None):
        _check_sigma(sigma)
        return np.array(V, dtype=float, copy=True)

    @classmethod
    def evaluate_batch(cls, objs, X):
        return np.zeros(len(objs))

    @classmethod
    def minimize_batch(cls, objs, tol=1e-9):
        return np.zeros((len(objs), objs[0].dim))


class QuadraticObjective(NodeObjective):
    """``f(x) = ||x - a||^2``."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=float).ravel()
        self.dim = len(self.a)

    def evaluate(self, x):
        d = np.asarray(x, float) - self.a
        return float(d @ d)

    def gradient(self, x, step=None):
        return 2.0 * (np.asarray(x, float) - self.a)

    @classmethod
    def prox_batch(cls, objs, V, sigma, tol=DEFAULT_TOL_PROX, scratch=None):
        sigma = _check_sigma(sigma)[:, None]
        A = np.stack([o.a for o in objs])
        return (2.0 * A + sigma * V) / (2.0 + sigma)

    @classmethod
    def evaluate_batch(cls, objs, X):
        D = X - np.stack([o.a for o in objs])
        return np.einsum("ij,ij->i", D, D)

    @classmethod
    def minimize_batch(cls, objs, tol=1e-9):
        return np.stack([o.a for o in objs]).copy()


def prox_quadratic(a, v, sigma):
    """Closed-form prox of ``||x - a||^2``: ``(2a + sigma v) / (2 + sigma)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    if a.shape != v.shape:
        raise ValueError("a and v must have the same shape")
    return (2.0 * a + sigma * v) / (2.0 + sigma)


class EventObjective(NodeObjective):
    """``f(x) = ||x - xbar||^2 + mu ||x||_2``."""

    def __init__(self, xbar, mu):
        self.xbar = np.asarray(xbar, dtype=float).ravel()
        self.mu = float(mu)
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        self.dim = len(self.xbar)

    def evaluate(self, x):
        x = np.asarray(x, float)
        d = x - self.xbar
        return float(d @ d + self.mu * np.linalg.norm(x))

    def gradient(self, x, step=1e-6):
        x = np.asarray(x, float)
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return super().gradient(x, step)
        return 2.0 * (x - self.xbar) + self.mu * x / nrm

    @staticmethod
    def _stack(objs):
        return np.stack([o.xbar for o in objs]), np.array([o.mu for o in objs])

    @classmethod
    def prox_batch(cls, objs, V, sigma, tol=DEFAULT_TOL_PROX, scratch=None):
        sigma = _check_sigma(sigma)
        xbar, mu = cls._stack(objs)
        w = (2.0 * xbar + sigma[:, None] * V) / (2.0 + sigma[:, None])
        return _block_soft_threshold(w, mu / (2.0 + sigma))

    @classmethod
    def evaluate_batch(cls, objs, X):
        xbar, mu = cls._stack(objs)
        D = X - xbar
        return np.einsum("ij,ij->i", D, D) + mu * np.linalg.norm(X, axis=1)

    @classmethod
    def minimize_batch(cls, objs, tol=1e-9):
        xbar, mu = cls._stack(objs)
        return _block_soft_threshold(xbar, mu / 2.0)


def _block_soft_threshold(W, t):
    nrm = np.linalg.norm(W, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > t, 1.0 - t / nrm, 0.0)
    return W * scale[:, None]


def prox_event(obj: EventObjective, v, sigma):
    return EventObjective.prox_batch([obj], np.asarray(v, float)[None], np.array([sigma], float))[0]


class RegressionObjective(NodeObjective):
    """Squared error of a single-sale linear price model plus ridge on the
    feature weights: ``(f^T x - price)^2 + mu ||x[:-1]||^2`` with
    ``f = (features..., 1)``; the trailing offset is not penalized."""

    def __init__(self, features, price, mu):
        self.features = np.asarray(features, dtype=float).ravel()
        self.price = float(price)
        self.mu = float(mu)
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        self.dim = len(self.features) + 1

    @property
    def row(self):
        return np.append(self.features, 1.0)

    def predict(self, x):
        return float(self.row @ np.asarray(x, float))

    def evaluate(self, x):
        x = np.asarray(x, float)
        r = self.row @ x - self.price
        return float(r * r + self.mu * (x[:-1] @ x[:-1]))

    def gradient(self, x, step=None):
        x = np.asarray(x, float)
        row = self.row
        g = 2.0 * row * (row @ x - self.price)
        g[:-1] += 2.0 * self.mu * x[:-1]
        return g

    @staticmethod
    def _system(objs, sigma):
        F = np.stack([o.row for o in objs])
        price = np.array([o.price for o in objs])
        mu = np.array([o.mu for o in objs])
        p = F.shape[1]
        mask = np.ones(p)
        mask[-1] = 0.0
        M = 2.0 * F[:, :, None] * F[:, None, :]
        M += (2.0 * mu[:, None] * mask[None, :] + sigma[:, None])[:, :, None] * np.eye(p)[None]
        rhs = 2.0 * F * price[:, None]
        return M, rhs

    @classmethod
    def prox_batch(cls, objs, V, sigma, tol=DEFAULT_TOL_PROX, scratch=None):
        sigma = _check_sigma(sigma)
        M, rhs = cls._system(objs, sigma)
        rhs = rhs + sigma[:, None] * V
        return np.linalg.solve(M, rhs[:, :, None])[:, :, 0]

    @classmethod
    def evaluate_batch(cls, objs, X):
        F = np.stack([o.row for o in objs])
        price = np.array([o.price for o in objs])
        mu = np.array([o.mu for o in objs])
        r = np.einsum("ij,ij->i", F, X) - price
        return r * r + mu * np.einsum("ij,ij->i", X[:, :-1], X[:, :-1])

    @classmethod
    def minimize_batch(cls, objs, tol=1e-9):
        out = np.empty((len(objs), objs[0].dim))
        zero = np.zeros(len(objs))
        M, rhs = cls._system(objs, zero)
        for i, o in enumerate(objs):
            if o.mu > 0:
                out[i] = np.linalg.solve(M[i], rhs[i])
            else:
                out[i] = np.linalg.lstsq(M[i], rhs[i], rcond=None)[0]
        return out


def prox_regression(obj: RegressionObjective, v, sigma):
    return RegressionObjective.prox_batch([obj], np.asarray(v, float)[None], np.array([sigma], float))[0]


class SvmObjective(NodeObjective):
    """Soft-margin SVM with the slacks minimized out:
    ``0.5 ||x_a||^2 + c * sum(max(0, 1 - y (W x_a + x_0)))``.

    The prox is solved in the dual, a box-constrained QP over one multiplier
    per training point, by coordinate descent. Its stopping test is the
    projected dual gradient, which equals the violation of the hinge
    subgradient conditions at the recovered primal point.
    """

    max_sweeps = 20_000

    def __init__(self, W, y, c=0.75):
        self.W = np.asarray(W, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        if self.W.ndim != 2 or self.W.shape[0] != len(self.y):
            raise ValueError("W must be (samples, features) matching y")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.c = float(c)
        if self.c < 0:
            raise ValueError("c must be non-negative")
        self.dim = self.W.shape[1] + 1

    def batch_key(self):
        return (type(self), self.W.shape)

    def margins(self, x):
        x = np.asarray(x, float)
        return self.y * (self.W @ x[:-1] + x[-1])

    def predict(self, x, W=None):
        x = np.asarray(x, float)
        W = self.W if W is None else np.asarray(W, float)
        return np.where(W @ x[:-1] + x[-1] >= 0, 1.0, -1.0)

    def evaluate(self, x):
        x = np.asarray(x, float)
        hinge = np.maximum(0.0, 1.0 - self.margins(x))
        return float(0.5 * x[:-1] @ x[:-1] + self.c * hinge.sum())

    @staticmethod
    def _stack(objs):
        G = np.stack([np.hstack([o.W, np.ones((len(o.y), 1))]) * o.y[:, None] for o in objs])
        c = np.array([o.c for o in objs])
        return G, c

    @classmethod
    def evaluate_batch(cls, objs, X):
        G, c = cls._stack(objs)
        margins = np.einsum("knp,kp->kn", G, X)
        hinge = np.maximum(0.0, 1.0 - margins).sum(axis=1)
        return 0.5 * np.einsum("ij,ij->i", X[:, :-1], X[:, :-1]) + c * hinge

    @classmethod
    def prox_batch(cls, objs, V, sigma, tol=DEFAULT_TOL_PROX, scratch=None):
        sigma = _check_sigma(sigma)
        V = np.asarray(V, dtype=float)
        k = len(objs)
        if scratch is None:
            scratch = {}
        ids = tuple(map(id, objs))
        if scratch.get("ids") != ids:
            scratch.clear()
            scratch["ids"] = ids
            scratch["G"], scratch["c"] = cls._stack(objs)
        G, c = scratch["G"], scratch["c"]
        N, p = G.shape[1], G.shape[2]
        if not np.array_equal(scratch.get("sigma"), sigma):
            qinv = np.empty((k, p))
            qinv[:, :-1] = 1.0 / (1.0 + sigma[:, None])
            qinv[:, -1] = 1.0 / sigma
            scratch["sigma"] = sigma.copy()
            scratch["qinv"] = qinv
            scratch["hdiag"] = np.einsum("knp,knp,kp->kn", G, G, qinv)
        qinv, hdiag = scratch["qinv"], scratch["hdiag"]
        alpha = scratch.get("alpha")
        if alpha is None or alpha.shape != (k, N):
            alpha = np.zeros((k, N))
        alpha = np.clip(alpha, 0.0, c[:, None])

        b = sigma[:, None] * V
        X = np.empty((k, p))
        res = np.empty(k)
        failed = svm_dual_cd(G, qinv, b, alpha, c, hdiag, float(tol), cls.max_sweeps, X, res)
        scratch["alpha"] = alpha
        scratch["residual"] = res
        if failed:
            raise ProxError("SVM prox did not converge", best=X, residual=float(res.max()))
        return X


def prox_svm(obj: SvmObjective, v, sigma, tol=DEFAULT_TOL_PROX):
    return obj.prox(v, sigma, tol)


def objective_from_dict(d) -> NodeObjective:
    """Build an objective from its JSON description (see ``objectives_file``)."""
    kind = d.get("type")
    if kind == "quadratic":
        return QuadraticObjective(d["a"])
    if kind == "zero":
        return ZeroObjective(d["dim"])
    if kind == "event":
        return EventObjective(d["xbar"], d.get("mu", 0.0))
    if kind == "regression":
        return RegressionObjective(d["features"], d["price"], d.get("mu", 0.0))
    if kind == "svm":
        return SvmObjective(d["W"], d["y"], d.get("c", 0.75))
    raise ValueError(f"unknown objective type {kind!r}")


def objective_to_dict(obj: NodeObjective):
    if isinstance(obj, QuadraticObjective):
        return {"type": "quadratic", "a": obj.a.tolist()}
    if isinstance(obj, ZeroObjective):
        return {"type": "zero", "dim": obj.dim}
    if isinstance(obj, EventObjective):
        return {"type": "event", "xbar": obj.xbar.tolist(), "mu": obj.mu}
    if isinstance(obj, RegressionObjective):
        return {"type": "regression", "features": obj.features.tolist(), "price": obj.price, "mu": obj.mu}
    if isinstance(obj, SvmObjective):
        return {"type": "svm", "W": obj.W.tolist(), "y": obj.y.tolist(), "c": obj.c}
    raise TypeError(f"cannot serialize {type(obj).__name__}")
