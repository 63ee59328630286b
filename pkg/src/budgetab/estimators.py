"""Treatment-effect estimators and their closed-form moments.

Division follows the ``0/0 = 0`` convention: terms with a zero observation
are skipped, while a nonzero observation paired with a zero probability is an
inconsistency and raises :class:`EstimatorError`.
"""

import numpy as np

from budgetab.model import ObservationMatrix


class EstimatorError(ValueError):
    pass


def _values(O):
    return np.asarray(O.values if isinstance(O, ObservationMatrix) else O, dtype=float)


def _weighted(O, w, q, name):
    O = _values(O)
    w = np.asarray(w, dtype=float)
    q = np.asarray(q, dtype=float)
    obs = (O != 0) & (w != 0)
    bad = obs & (q <= 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise EstimatorError(f"observation at ({i}, {j}) has zero {name}")
    safe = np.where(obs, q, 1.0)
    return np.where(obs, O * w / safe, 0.0)


def ht_estimator(O, w1, w0, P):
    """Horvitz-Thompson estimate with inclusion probabilities ``P``."""
    return float(_weighted(O, w1, P, "inclusion probability").sum()
                 - _weighted(O, w0, P, "inclusion probability").sum())


def plugin_estimator(O, w1, w0, X):
    """Horvitz-Thompson form with design probabilities ``X`` in place of ``P``."""
    return float(_weighted(O, w1, X, "design probability").sum()
                 - _weighted(O, w0, X, "design probability").sum())


def hajek_estimator(O, w1, w0, P, U):
    """Self-normalised estimate; ``nan`` when an observed arm has a zero normaliser.

    ``U`` supplies the utilities the observations are divided by (realised
    values, or means when only those are known).
    """
    O = _values(O)
    U = np.asarray(U, dtype=float)
    m = O.shape[0]
    total = 0.0
    for w, sign in ((w1, 1.0), (w0, -1.0)):
        num = _weighted(O, w, P, "inclusion probability")
        with np.errstate(divide="ignore", invalid="ignore"):
            den = np.where((num != 0) & (U != 0), num / U, 0.0)
        if np.any(np.asarray(w) != 0) and num.any():
            if den.sum() == 0:
                return float("nan")
            total += sign * m * num.sum() / den.sum()
        elif np.any(np.asarray(w) != 0):
            return float("nan")
    return float(total)


def _support_x(inst, X):
    X = np.asarray(X, dtype=float)
    supp = inst.support
    if np.any(X[supp] <= 0):
        raise EstimatorError("x must be positive wherever w1 + w0 > 0")
    return X, supp


def variance_closed_form(inst, X):
    """Estimator variance when no item is ever throttled."""
    X, supp = _support_x(inst, X)
    mu, s2 = inst.utility.mu, inst.utility.sigma2
    w = inst.w1.astype(float) + inst.w0
    first = ((mu**2 + s2) * w)[supp] / X[supp]
    cross = (mu * inst.w1).sum(axis=1) @ (mu * inst.w0).sum(axis=1)
    return float(first.sum() - (mu**2 * w).sum() + 2.0 * cross)


def mse_upper_bound(inst, X):
    """Upper bound on the plug-in estimator's MSE under any throttling."""
    X, supp = _support_x(inst, X)
    mu, s2 = inst.utility.mu, inst.utility.sigma2
    w = inst.w1.astype(float) + inst.w0
    first = ((mu**2 + s2) * w)[supp] / X[supp]
    return float(first.sum() + (mu * inst.w1).sum() ** 2 + (mu * inst.w0).sum() ** 2)


def trial_estimates(inst, q, kept, rng, kind="plugin"):
    """Per-trial estimates from a block of throttled allocations.

    ``kept`` is a ``(trials, m)`` array of surviving buyers (-1 for none) and
    ``q`` the probabilities the estimator divides by.  Utilities are drawn from
    ``inst.utility`` for every surviving edge.
    """
    T, m = kept.shape
    t_idx, i_idx = np.nonzero(kept >= 0)
    j_idx = kept[t_idx, i_idx]
    u = inst.utility.draw(i_idx, j_idx, rng)
    qv = np.asarray(q, dtype=float)[i_idx, j_idx]
    w1v = inst.w1[i_idx, j_idx]
    w0v = inst.w0[i_idx, j_idx]
    rel = (u != 0) & ((w1v != 0) | (w0v != 0))
    bad = rel & (qv <= 0)
    if bad.any():
        k = np.flatnonzero(bad)[0]
        raise EstimatorError(f"trial {t_idx[k]}: observation at ({i_idx[k]}, {j_idx[k]}) "
                             f"has zero probability")
    inv = np.where(rel, 1.0 / np.where(rel, qv, 1.0), 0.0)
    s1 = np.bincount(t_idx, u * w1v * inv, minlength=T)
    s0 = np.bincount(t_idx, u * w0v * inv, minlength=T)
    if kind in ("plugin", "ht"):
        return s1 - s0
    if kind == "hajek":
        n1 = np.bincount(t_idx, w1v * inv, minlength=T)
        n0 = np.bincount(t_idx, w0v * inv, minlength=T)
        has1, has0 = inst.w1.any(), inst.w0.any()
        with np.errstate(divide="ignore", invalid="ignore"):
            a1 = np.where(n1 > 0, m * s1 / n1, np.nan) if has1 else 0.0
            a0 = np.where(n0 > 0, m * s0 / n0, np.nan) if has0 else 0.0
        return a1 - a0
    raise ValueError(f"unknown estimator {kind!r}")
