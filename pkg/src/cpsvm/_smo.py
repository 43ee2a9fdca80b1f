"""Compiled SMO inner loop over a precomputed kernel matrix.

Solves the soft-margin dual in minimization form

    min_a  0.5 * a^T Q a - sum(a)   s.t.  y^T a = 0,  0 <= a_i <= C,

with ``Q_ij = y_i y_j K_ij``, picking working pairs by maximal violation for
the first index and second-order gain for the second (Fan, Chen & Lin 2005,
the libsvm rule).
"""

import numba as nb
import numpy as np

TAU = 1e-12


@nb.njit(cache=True, nogil=True)
def smo_solve(K, y, C, tol, max_iter):
    """Return ``(alpha, grad, iterations, converged)``.

    ``grad`` is the dual gradient ``Q a - 1`` at the returned ``alpha``.
    Convergence means ``m(a) - M(a) <= tol`` (maximal violating pair gap).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        # i: maximal -y*grad over the "up" set
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v > gmax:
                    gmax = v
                    i = t
        # j: minimal -y*grad over the "low" set, chosen by second-order gain
        gmin = np.inf
        j = -1
        best = np.inf
        if i >= 0:
            for t in range(n):
                if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                    v = -y[t] * grad[t]
                    if v < gmin:
                        gmin = v
                    diff = gmax - v
                    if diff > 0:
                        quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = TAU
                        gain = -(diff * diff) / quad
                        if gain <= best:
                            best = gain
                            j = t
        if i < 0 or j < 0 or gmax - gmin <= tol:
            converged = True
            break
        it += 1

        yi = y[i]
        yj = y[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        old_ai = alpha[i]
        old_aj = alpha[j]
        # step along the feasible direction (y_i, -y_j) keeping y^T a fixed
        delta = (-yi * grad[i] + yj * grad[j]) / quad
        ai = old_ai + yi * delta
        aj = old_aj - yj * delta
        # project back onto the box while preserving y_i a_i + y_j a_j
        s = yi * old_ai + yj * old_aj
        if yi == yj:
            lo = max(0.0, s * yi - C)
            hi = min(C, s * yi)
        else:
            lo = max(0.0, s * yi)
            hi = min(C, C + s * yi)
        if ai < lo:
            ai = lo
        elif ai > hi:
            ai = hi
        aj = yj * (s - yi * ai)
        if aj < 0.0:
            aj = 0.0
        elif aj > C:
            aj = C
        dai = ai - old_ai
        daj = aj - old_aj
        alpha[i] = ai
        alpha[j] = aj
        for t in range(n):
            grad[t] += y[t] * (yi * K[t, i] * dai + yj * K[t, j] * daj)
    return alpha, grad, it, converged
