# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror ``_pykernels`` exactly; see that module for docs."""

import numpy as np

from libc.math cimport exp, log, sqrt, isfinite, M_PI
from libc.stdlib cimport malloc, free


cdef inline double _lse_point(const double* xp, Py_ssize_t d, Py_ssize_t k,
                              const double[::1] logw, const double[:, ::1] means,
                              const double[::1] var, double* logc, double* score) noexcept nogil:
    # Returns log pi(x); writes the score into `score` when not NULL. logc is scratch of length k.
    cdef Py_ssize_t i, j
    cdef double sq, diff, mx = -1e308, s = 0.0, r
    for i in range(k):
        sq = 0.0
        for j in range(d):
            diff = xp[j] - means[i, j]
            sq += diff * diff
        logc[i] = logw[i] - 0.5 * d * log(2.0 * M_PI * var[i]) - 0.5 * sq / var[i]
        if logc[i] > mx:
            mx = logc[i]
    for i in range(k):
        logc[i] = exp(logc[i] - mx)
        s += logc[i]
    if score != NULL:
        for j in range(d):
            score[j] = 0.0
        for i in range(k):
            r = logc[i] / s
            for j in range(d):
                score[j] += r * (means[i, j] - xp[j]) / var[i]
    return mx + log(s)


def gmm_logpdf_score(const double[:, ::1] x, const double[::1] logw,
                     const double[:, ::1] means, const double[::1] var):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], k = logw.shape[0], p
    out_lp = np.empty(n)
    out_sc = np.empty((n, d))
    cdef double[::1] lp = out_lp
    cdef double[:, ::1] sc = out_sc
    cdef double* logc = <double*> malloc(k * sizeof(double))
    try:
        with nogil:
            for p in range(n):
                lp[p] = _lse_point(&x[p, 0], d, k, logw, means, var, logc, &sc[p, 0])
    finally:
        free(logc)
    return out_lp, out_sc


def leapfrog_gmm(const double[:, ::1] x0, const double[:, ::1] v0, const double[::1] h,
                 int n_steps, const double[::1] logw, const double[:, ::1] means,
                 const double[::1] var, double guard):
    cdef Py_ssize_t n = x0.shape[0], d = x0.shape[1], k = logw.shape[0], p, j
    cdef int step, bad = -1
    out_x = np.array(x0, dtype=np.float64, copy=True)
    out_v = np.array(v0, dtype=np.float64, copy=True)
    cdef double[:, ::1] x = out_x
    cdef double[:, ::1] v = out_v
    cdef double hp, half, nx, nv
    cdef double* logc = <double*> malloc(k * sizeof(double))
    cdef double* f = <double*> malloc(d * sizeof(double))
    try:
        with nogil:
            for p in range(n):
                hp = h[p]
                half = 0.5 * hp
                _lse_point(&x[p, 0], d, k, logw, means, var, logc, f)
                for step in range(n_steps):
                    for j in range(d):
                        v[p, j] += half * f[j]
                    for j in range(d):
                        x[p, j] += hp * v[p, j]
                    _lse_point(&x[p, 0], d, k, logw, means, var, logc, f)
                    nx = 0.0
                    nv = 0.0
                    for j in range(d):
                        v[p, j] += half * f[j]
                        nx += x[p, j] * x[p, j]
                        nv += v[p, j] * v[p, j]
                    if not (isfinite(nx) and isfinite(nv)) or nx > guard * guard or nv > guard * guard:
                        if bad < 0 or step < bad:
                            bad = step
                        break
    finally:
        free(logc)
        free(f)
    return out_x, out_v, bad


def mean_pairwise_distance(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1], i, j, c
    cdef double total = 0.0, row, sq, diff
    with nogil:
        for i in range(n):
            row = 0.0
            for j in range(m):
                sq = 0.0
                for c in range(d):
                    diff = a[i, c] - b[j, c]
                    sq += diff * diff
                row += sqrt(sq)
            total += row
    return total / (<double> n * <double> m)
