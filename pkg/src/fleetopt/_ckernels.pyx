# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels; drop-in twin of :mod:`fleetopt._pykernels`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, INFINITY, M_PI

cnp.import_array()

cdef double SQRT5 = sqrt(5.0)


def sq_dists(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i, j, k
    cdef double s, t
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    t = A[i, k] - B[j, k]
                    s += t * t
                O[i, j] = s
    return out


def assign_nearest(points, centroids):
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(centroids, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], m = C.shape[0], d = P.shape[1]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] L = labels
    cdef double[::1] D = dist
    cdef Py_ssize_t i, j, k, best_j
    cdef double s, t, best
    with nogil:
        for i in range(n):
            best = INFINITY
            best_j = 0
            for j in range(m):
                s = 0.0
                for k in range(d):
                    t = P[i, k] - C[j, k]
                    s += t * t
                if s < best:
                    best = s
                    best_j = j
            L[i] = best_j
            D[i] = best
    return labels, dist


cdef void _matern_fill(double[:, ::1] X1, double[:, ::1] X2, double[::1] inv_ls,
                       double variance, double[:, ::1] K) noexcept nogil:
    cdef Py_ssize_t n = X1.shape[0], m = X2.shape[0], d = X1.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t, r
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = (X1[i, k] - X2[j, k]) * inv_ls[k]
                s += t * t
            r = SQRT5 * sqrt(s)
            K[i, j] = variance * (1.0 + r + r * r / 3.0) * exp(-r)


def matern52(x1, x2, lengthscales, double variance):
    cdef double[:, ::1] X1 = np.ascontiguousarray(x1, dtype=np.float64)
    cdef double[:, ::1] X2 = np.ascontiguousarray(x2, dtype=np.float64)
    cdef double[::1] inv_ls = 1.0 / np.ascontiguousarray(lengthscales, dtype=np.float64)
    out = np.empty((X1.shape[0], X2.shape[0]), dtype=np.float64)
    cdef double[:, ::1] K = out
    with nogil:
        _matern_fill(X1, X2, inv_ls, variance, K)
    return out


def gp_nlml(x, y, lengthscales, double variance, double noise):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] Y = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] inv_ls = 1.0 / np.ascontiguousarray(lengthscales, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0]
    buf = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] K = buf
    cdef double[::1] a = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double s, t, logdet = 0.0, quad = 0.0
    cdef bint ok = True
    with nogil:
        _matern_fill(X, X, inv_ls, variance, K)
        for i in range(n):
            K[i, i] += noise
        # in-place lower Cholesky
        for j in range(n):
            s = K[j, j]
            for k in range(j):
                s -= K[j, k] * K[j, k]
            if not s > 0.0:
                ok = False
                break
            s = sqrt(s)
            K[j, j] = s
            logdet += log(s)
            for i in range(j + 1, n):
                t = K[i, j]
                for k in range(j):
                    t -= K[i, k] * K[j, k]
                K[i, j] = t / s
        if ok:
            # forward substitution L a = y
            for i in range(n):
                s = Y[i]
                for k in range(i):
                    s -= K[i, k] * a[k]
                a[i] = s / K[i, i]
                quad += a[i] * a[i]
    if not ok:
        return INFINITY
    return 0.5 * quad + logdet + 0.5 * n * log(2.0 * M_PI)


def matern52_ls_grad(x, lengthscales, double variance, w):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] inv_ls = 1.0 / np.ascontiguousarray(lengthscales, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    out = np.zeros(d, dtype=np.float64)
    cdef double[::1] G = out
    cdef Py_ssize_t i, j, k
    cdef double s, t, r, e
    with nogil:
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k in range(d):
                    t = (X[i, k] - X[j, k]) * inv_ls[k]
                    s += t * t
                r = SQRT5 * sqrt(s)
                e = W[i, j] * variance * (5.0 / 3.0) * (1.0 + r) * exp(-r)
                for k in range(d):
                    t = (X[i, k] - X[j, k]) * inv_ls[k]
                    G[k] += e * t * t
    return out


def mc_expected_improvement(mean, std, z, double best):
    cdef double[::1] M = np.ascontiguousarray(mean, dtype=np.float64)
    cdef double[::1] S = np.ascontiguousarray(std, dtype=np.float64)
    cdef double[::1] Z = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = M.shape[0], q = Z.shape[0], i, k
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] O = out
    cdef double acc, v
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(q):
                v = M[i] + S[i] * Z[k] - best
                if v > 0.0:
                    acc += v
            O[i] = acc / q
    return out
