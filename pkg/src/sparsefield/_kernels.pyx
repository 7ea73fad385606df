# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: kernel blocks, per-node Vecchia conditionals, ancestral sampling.

The pure-numpy twin lives in ``_kernels_py``; both expose the same three
functions with the same argument conventions.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, pow, sqrt, fmin
from scipy.linalg.cython_lapack cimport dpotrf
from scipy.linalg.cython_blas cimport dtrsv

cnp.import_array()

cdef enum:
    FAMILY_POWEXP = 0
    FAMILY_BRIDGE = 1


cdef inline double _kern(const double[:, ::1] X, Py_ssize_t i,
                         const double[:, ::1] Y, Py_ssize_t j,
                         int family, double variance, double phi, double nu) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s, t, diff
    if family == FAMILY_BRIDGE:
        s = X[i, 0]
        t = Y[j, 0]
        return variance * (fmin(s, t) - s * t)
    s = 0.0
    for k in range(X.shape[1]):
        diff = X[i, k] - Y[j, k]
        s += diff * diff
    if s == 0.0:
        return variance
    return variance * exp(-pow(sqrt(s) / phi, nu))


def cov_cross(const double[:, ::1] X, const double[:, ::1] Y, int family,
              double variance, double phi, double nu):
    cdef Py_ssize_t n = X.shape[0], p = Y.shape[0], i, j
    out = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(p):
                o[i, j] = _kern(X, i, Y, j, family, variance, phi, nu)
    return out


cdef int _fill_and_factor(const double[:, ::1] C, const long[::1] idx, Py_ssize_t c,
                          double* K, int family, double variance, double phi,
                          double nu, double jitter) noexcept nogil:
    # column-major c x c lower factor in K; returns LAPACK info
    cdef Py_ssize_t a, b
    cdef int n = <int>c, lda = <int>c, info = 0
    cdef char uplo = b'L'
    for b in range(c):
        for a in range(b, c):
            K[a + b * c] = _kern(C, idx[a], C, idx[b], family, variance, phi, nu)
        K[b + b * c] += jitter
    dpotrf(&uplo, &n, K, &lda, &info)
    return info


def vecchia_factor(const double[:, ::1] nodes, const double[:, ::1] cands,
                   const long[:, ::1] nbr, const long[::1] counts, int family,
                   double variance, double phi, double nu, double jitter):
    """Conditional coefficients and variances of each node given its neighbours.

    Returns ``(coeffs, condvar, status)`` where status is 0 (clean), 1 (needed
    jitter) or 2 (singular even after jitter).
    """
    cdef Py_ssize_t n = nodes.shape[0], w = nbr.shape[1], i, a, c
    cdef Py_ssize_t cmax = 0
    for i in range(n):
        if counts[i] > cmax:
            cmax = counts[i]
    coeffs_arr = np.zeros((n, w), dtype=np.float64)
    condvar_arr = np.empty(n, dtype=np.float64)
    status_arr = np.zeros(n, dtype=np.int8)
    K_arr = np.empty(max(cmax * cmax, 1), dtype=np.float64)
    k_arr = np.empty(max(cmax, 1), dtype=np.float64)
    idx_arr = np.empty(max(cmax, 1), dtype=np.int64)
    cdef double[:, ::1] coeffs = coeffs_arr
    cdef double[::1] condvar = condvar_arr
    cdef cnp.int8_t[::1] status = status_arr
    cdef double[::1] K = K_arr
    cdef double[::1] kv = k_arr
    cdef long[::1] idx = idx_arr
    cdef int info, cn, one = 1
    cdef char lo = b'L', nt = b'N', tr = b'T', nd = b'N'
    cdef double acc
    with nogil:
        for i in range(n):
            c = counts[i]
            if c == 0:
                condvar[i] = _kern(nodes, i, nodes, i, family, variance, phi, nu)
                continue
            for a in range(c):
                idx[a] = nbr[i, a]
            info = _fill_and_factor(cands, idx, c, &K[0], family, variance, phi, nu, 0.0)
            if info != 0:
                status[i] = 1
                info = _fill_and_factor(cands, idx, c, &K[0], family, variance, phi, nu,
                                        jitter)
                if info != 0:
                    status[i] = 2
                    condvar[i] = 0.0
                    continue
            for a in range(c):
                kv[a] = _kern(nodes, i, cands, idx[a], family, variance, phi, nu)
            cn = <int>c
            dtrsv(&lo, &nt, &nd, &cn, &K[0], &cn, &kv[0], &one)
            acc = 0.0
            for a in range(c):
                acc += kv[a] * kv[a]
            condvar[i] = _kern(nodes, i, nodes, i, family, variance, phi, nu) - acc
            dtrsv(&lo, &tr, &nd, &cn, &K[0], &cn, &kv[0], &one)
            for a in range(c):
                coeffs[i, a] = kv[a]
    return coeffs_arr, condvar_arr, status_arr


def ancestral_sample(const long[:, ::1] nbr, const long[::1] counts,
                     const double[:, ::1] coeffs, const double[::1] sd, double mean,
                     const double[:, ::1] W):
    """Sequential draw of the reference process, one row of ``W`` per replication."""
    cdef Py_ssize_t R = W.shape[0], r = W.shape[1], k, i, a
    out = np.empty((R, r), dtype=np.float64)
    cdef double[:, ::1] Z = out
    cdef double acc
    with nogil:
        for k in range(R):
            for i in range(r):
                acc = 0.0
                for a in range(counts[i]):
                    acc += coeffs[i, a] * (Z[k, nbr[i, a]] - mean)
                Z[k, i] = mean + acc + sd[i] * W[k, i]
    return out
