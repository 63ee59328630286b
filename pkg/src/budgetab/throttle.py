"""Throttling: map any sampled allocation to a budget-satisfying one."""

import math

import numpy as np

from budgetab.model import FEAS_TOL


def _throttle_in_order(W, C, b, order, greedy, tol):
    W = np.asarray(W)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    if W.shape != C.shape or b.shape != (C.shape[1],):
        raise ValueError(f"dimension mismatch: W{W.shape}, C{C.shape}, b{b.shape}")
    Wp = W[order].astype(bool)
    spend = np.where(Wp, C[order], 0.0)
    if greedy:
        keep = np.zeros_like(Wp)
        acc = np.zeros(W.shape[1])
        for k in range(len(order)):
            for j in np.flatnonzero(Wp[k]):
                if acc[j] + spend[k, j] <= b[j] + tol:
                    acc[j] += spend[k, j]
                    keep[k, j] = True
    else:
        # keep an edge iff its buyer's running spend, counted in order, still fits
        keep = Wp & (np.cumsum(spend, axis=0) <= b + tol)
    out = np.zeros(W.shape, dtype=np.int8)
    out[order] = keep
    return out


def sequential_throttle(W, C, b, greedy=False, tol=FEAS_TOL):
    """Keep, per buyer, the longest item-index prefix whose spend fits the budget.

    With ``greedy=True`` an overspending item is skipped and later items that
    still fit are kept instead of being cut with it.
    """
    return _throttle_in_order(W, C, b, np.arange(np.shape(W)[0]), greedy, tol)


def random_throttle(W, C, b, rng, greedy=False, tol=FEAS_TOL):
    """Sequential throttling in a uniformly permuted item order."""
    order = rng.permutation(np.shape(W)[0])
    return _throttle_in_order(W, C, b, order, greedy, tol)


def survival_lower_bound(m_j, l, h, x0):
    """Lower bound on ``Pr(item survives throttling | sampled)`` under random throttling.

    ``m_j`` is the number of items related to the buyer, costs lie in
    ``[l, h]`` and every support probability is at least ``x0``.  Clamped at 0.
    """
    if not 0 < l <= h:
        raise ValueError("need 0 < l <= h")
    if not 0 < x0 <= 1:
        raise ValueError("need 0 < x0 <= 1")
    if m_j < 1:
        raise ValueError("need m_j >= 1")
    T = math.ceil(h / (l * x0))
    val = 1.0 - (T + m_j ** (2.0 / 3.0)) / m_j - math.exp(-2.0 * m_j ** (1.0 / 3.0) * l**2 * x0**2 / h**2)
    return max(0.0, val)
