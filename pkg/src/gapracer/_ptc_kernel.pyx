# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loop of the projected dual iteration.

Semantically identical to the pure-Python fallback in ``qp.py``; selected
at import time when available.  The loop is one BLAS dgemv plus a
componentwise projected update per iteration.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite
from scipy.linalg.cython_blas cimport dcopy, dgemv

cnp.import_array()


def iterate(double[::1, :] G, double[::1] b, double[::1] lam0,
            double gamma, int k_max, double tol):
    """Run the capped projected iteration on the dual variable.

    Parameters
    ----------
    G : (m, m) Fortran-ordered PSD matrix of the reduced dual equation.
    b : (m,) offset vector.
    lam0 : (m,) nonnegative warm start (not modified).
    gamma : step length (h*beta).
    k_max : hard iteration cap.
    tol : termination threshold on the max-norm residual.

    Returns
    -------
    (lam, iterations, residual, finite) where ``finite`` is False when a
    non-finite value appeared (caller must fall back).
    """
    cdef int m = G.shape[0]
    cdef int inc = 1
    cdef double one = 1.0
    cdef cnp.ndarray[double, ndim=1] lam_arr = np.array(lam0, dtype=np.float64,
                                                        copy=True)
    cdef cnp.ndarray[double, ndim=1] g_arr = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] best_arr = lam_arr.copy()
    cdef double[::1] lam = lam_arr
    cdef double[::1] g = g_arr
    cdef double[::1] best = best_arr
    cdef double best_resid = np.inf
    cdef double resid, step, nxt, f, af
    cdef int k, i, iters = 0

    if m == 0:
        return lam_arr, 0, 0.0, True

    for k in range(k_max + 1):
        # g = G @ lam + b
        dcopy(&m, &b[0], &inc, &g[0], &inc)
        dgemv("N", &m, &m, &one, &G[0, 0], &m, &lam[0], &inc, &one,
              &g[0], &inc)
        resid = 0.0
        for i in range(m):
            step = lam[i] - gamma * g[i]
            if not isfinite(step):
                # NaN/inf would silently vanish through the projection
                # below ("nan > 0" is false in C), so flag it here.
                return lam_arr, iters, step, False
            nxt = step if step > 0.0 else 0.0
            f = (lam[i] - nxt) / gamma
            af = fabs(f)
            if af > resid:
                resid = af
            g[i] = nxt  # reuse g as the updated iterate
        if not isfinite(resid):
            return lam_arr, iters, resid, False
        if resid < best_resid:
            best_resid = resid
            dcopy(&m, &lam[0], &inc, &best[0], &inc)
        if resid <= tol:
            return lam_arr, iters, resid, True
        if k == k_max:
            break
        dcopy(&m, &g[0], &inc, &lam[0], &inc)
        iters += 1

    return best_arr, iters, best_resid, True
