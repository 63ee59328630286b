"""Numpy implementations of the compiled kernels.

Every floating-point operation happens in the same order as in ``_core.pyx``
so the backends are interchangeable bit-for-bit.  Rows are vectorised across
the leading axis and loops run over the (short) buyer or item axis.
"""

import numpy as np


def _dense(indptr, cols, values, m, n):
    out = np.zeros((m, n))
    rows = np.repeat(np.arange(m), np.diff(indptr))
    out[rows, cols] = values
    return out


def _entries(a, d, eps):
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.sqrt(a / d)
    v = np.where(v < eps, eps, v)
    v = np.where(v > 1.0, 1.0, v)
    return np.where(d <= 0.0, 1.0, v)


def _row_sums(A, Cm, support, lam, eps, mu):
    d = mu[:, None] + lam[None, :] * Cm
    vals = _entries(A, d, eps)
    s = np.zeros(A.shape[0])
    for j in range(A.shape[1]):
        s = np.where(support[:, j], s + vals[:, j], s)
    return s


def row_solve(indptr, cols, a, c, lam, eps, x, mu):
    m = indptr.shape[0] - 1
    n = lam.shape[0]
    A = _dense(indptr, cols, a, m, n)
    Cm = _dense(indptr, cols, c, m, n)
    support = _dense(indptr, cols, np.ones_like(a), m, n) > 0
    size = np.diff(indptr)

    zero = np.zeros(m)
    s0 = _row_sums(A, Cm, support, lam, eps, zero)
    need = (s0 > 1.0) & (size > 0)

    hi = A.max(axis=1) * size * size
    while True:
        over = need & (_row_sums(A, Cm, support, lam, eps, hi) > 1.0)
        if not over.any():
            break
        hi = np.where(over, 2.0 * hi, hi)
    lo = np.zeros(m)
    active = need.copy()
    for _ in range(400):
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        active &= (mid > lo) & (mid < hi)
        big = _row_sums(A, Cm, support, lam, eps, mid) > 1.0
        lo = np.where(active & big, mid, lo)
        hi = np.where(active & ~big, mid, hi)

    muv = np.where(need, hi, 0.0)
    mu[:] = muv
    rows = np.repeat(np.arange(m), size)
    x[:] = _entries(a, muv[rows] + lam[cols] * c, eps)


def draw_block(cumx, cost, budget, unif, order, greedy, tol, sampled, kept):
    T, m = unif.shape
    n = cumx.shape[1]
    tix = np.arange(T)
    shared = order.shape[0] == 1
    acc = np.zeros((T, n))
    for k in range(m):
        items = np.full(T, order[0, k]) if shared else order[:, k]
        u = unif[tix, items]
        rowcum = cumx[items]
        j = (rowcum <= u[:, None]).sum(axis=1)
        abort = j == n
        jj = np.where(abort, 0, j)
        spend = acc[tix, jj] + cost[items, jj]
        ok = ~abort & (spend <= budget[jj] + tol)
        sampled[tix, items] = np.where(abort, -1, j)
        kept[tix, items] = np.where(ok, j, -1)
        grow = ok if greedy else ~abort
        acc[tix, jj] = np.where(grow, spend, acc[tix, jj])
