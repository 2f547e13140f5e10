"""Compiled inner loops."""

import numba
import numpy as np


@numba.njit(cache=True)
def svm_dual_cd(G, qinv, b, alpha, c, hdiag, tol, max_sweeps, X, res):
    """Dual coordinate descent for the hinge prox, one node at a time.

    Per node k: minimize 0.5 (b + G^T a)^T diag(qinv) (b + G^T a) - sum(a)
    over 0 <= a <= c. Writes X[k] = qinv * (b + G^T a) and the final
    projected-gradient residual; returns the number of unconverged nodes.
    """
    K, N, P = G.shape
    failed = 0
    for k in range(K):
        x = X[k]
        for p in range(P):
            s = b[k, p]
            for n in range(N):
                s += G[k, n, p] * alpha[k, n]
            x[p] = qinv[k, p] * s
        r = np.inf
        for sweep in range(max_sweeps):
            r = 0.0
            for n in range(N):
                gr = -1.0
                for p in range(P):
                    gr += G[k, n, p] * x[p]
                a = alpha[k, n]
                proj = a - gr
                if proj < 0.0:
                    proj = 0.0
                elif proj > c[k]:
                    proj = c[k]
                viol = abs(a - proj)
                if viol > r:
                    r = viol
            if r <= tol:
                break
            for n in range(N):
                gr = -1.0
                for p in range(P):
                    gr += G[k, n, p] * x[p]
                a = alpha[k, n]
                new = a - gr / hdiag[k, n]
                if new < 0.0:
                    new = 0.0
                elif new > c[k]:
                    new = c[k]
                d = new - a
                if d != 0.0:
                    alpha[k, n] = new
                    for p in range(P):
                        x[p] += d * qinv[k, p] * G[k, n, p]
            # resync against drift from the incremental updates
            for p in range(P):
                s = b[k, p]
                for n in range(N):
                    s += G[k, n, p] * alpha[k, n]
                x[p] = qinv[k, p] * s
        res[k] = r
        if r > tol:
            failed += 1
    return failed
