# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Both kernels mirror :mod:`budgetab._fallback` operation for operation, so the
two backends agree bit-for-bit on identical inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline double _entry(double a, double d, double eps) noexcept nogil:
    cdef double v
    if d <= 0.0:
        return 1.0
    v = sqrt(a / d)
    if v < eps:
        return eps
    if v > 1.0:
        return 1.0
    return v


cdef inline double _row_sum(const cnp.int64_t[::1] indptr,
                            const cnp.int64_t[::1] cols,
                            const double[::1] a, const double[::1] c,
                            const double[::1] lam, double eps,
                            Py_ssize_t i, double mu) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        s += _entry(a[k], mu + lam[cols[k]] * c[k], eps)
    return s


def row_solve(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] cols,
              const double[::1] a, const double[::1] c, const double[::1] lam,
              double eps, double[::1] x, double[::1] mu):
    """Minimise the row Lagrangian for fixed budget duals.

    For every row the multiplier ``mu[i]`` is the smallest value making the
    clamped stationary point sum to at most one; ``x`` receives that point.
    """
    cdef Py_ssize_t m = indptr.shape[0] - 1
    cdef Py_ssize_t i, k, it, size
    cdef double s, lo, hi, mid, amax, muv
    with nogil:
        for i in range(m):
            size = indptr[i + 1] - indptr[i]
            if size == 0:
                mu[i] = 0.0
                continue
            s = _row_sum(indptr, cols, a, c, lam, eps, i, 0.0)
            if s <= 1.0:
                muv = 0.0
            else:
                amax = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    if a[k] > amax:
                        amax = a[k]
                hi = amax * size * size
                while _row_sum(indptr, cols, a, c, lam, eps, i, hi) > 1.0:
                    hi = 2.0 * hi
                lo = 0.0
                for it in range(400):
                    mid = 0.5 * (lo + hi)
                    if mid <= lo or mid >= hi:
                        break
                    if _row_sum(indptr, cols, a, c, lam, eps, i, mid) > 1.0:
                        lo = mid
                    else:
                        hi = mid
                muv = hi
            mu[i] = muv
            for k in range(indptr[i], indptr[i + 1]):
                x[k] = _entry(a[k], muv + lam[cols[k]] * c[k], eps)


def draw_block(const double[:, ::1] cumx, const double[:, ::1] cost,
               const double[::1] budget, const double[:, ::1] unif,
               const cnp.int64_t[:, ::1] order, bint greedy, double tol,
               int[:, ::1] sampled, int[:, ::1] kept):
    """Sample one allocation per trial and throttle it.

    ``order[t]`` is the processing order of items in trial ``t`` (a single
    row is broadcast to every trial).  ``sampled`` receives the drawn buyer
    (-1 on abort) and ``kept`` the buyer that survives throttling.
    """
    cdef Py_ssize_t T = unif.shape[0]
    cdef Py_ssize_t m = unif.shape[1]
    cdef Py_ssize_t n = cumx.shape[1]
    cdef Py_ssize_t t, k, i, j, orow
    cdef double u, spend
    cdef bint shared = order.shape[0] == 1
    cdef double[::1] acc = np.zeros(n, dtype=np.float64)
    with nogil:
        for t in range(T):
            for j in range(n):
                acc[j] = 0.0
            orow = 0 if shared else t
            for k in range(m):
                i = order[orow, k]
                u = unif[t, i]
                j = 0
                while j < n and not (u < cumx[i, j]):
                    j += 1
                if j == n:
                    sampled[t, i] = -1
                    kept[t, i] = -1
                    continue
                sampled[t, i] = <int>j
                spend = acc[j] + cost[i, j]
                if spend <= budget[j] + tol:
                    kept[t, i] = <int>j
                    acc[j] = spend
                else:
                    kept[t, i] = -1
                    if not greedy:
                        acc[j] = spend
