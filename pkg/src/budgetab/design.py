"""Experiment-matrix constructors."""

import numpy as np

from budgetab.solver import SolverConfig, SolverError, solve_separable


def design_weights(inst):
    """Second-moment weights ``(mu^2 + sigma^2) * (w1 + w0)`` of the variance objective."""
    u = inst.utility
    return (u.mu**2 + u.sigma2) * (inst.w1.astype(float) + inst.w0)


def bernoulli_design(w0, w1, p=0.5):
    """Item-level randomisation: treatment allocation with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return p * np.asarray(w1, dtype=float) + (1.0 - p) * np.asarray(w0, dtype=float)


def unconstrained_optimal_design(inst):
    """Closed-form minimiser when budgets are ignored.

    Each row is proportional to ``(w1 + w0) * sqrt(mu^2 + sigma^2)``; rows
    without weight stay zero.
    """
    u = inst.utility
    num = (inst.w1.astype(float) + inst.w0) * np.sqrt(u.mu**2 + u.sigma2)
    tot = num.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        X = np.where(tot > 0, num / tot, 0.0)
    return X


def constrained_optimal_design(inst, cfg=None, return_certificate=False):
    """Budget-constrained minimiser of the variance objective.

    Raises :class:`~budgetab.solver.SolverError` (carrying the certificate)
    when the solver does not reach its KKT tolerance.
    """
    cfg = cfg or SolverConfig()
    a = design_weights(inst)
    if not np.any(a > 0):
        X = np.zeros(a.shape)
        return (X, None) if return_certificate else X
    X, cert = solve_separable(a, inst.costs, inst.budgets, cfg)
    if not cert.converged:
        raise SolverError(
            f"solver stopped after {cert.iterations} iterations with KKT residual "
            f"{cert.kkt_residual:.3g}", x=X, certificate=cert)
    return (X, cert) if return_certificate else X


def design_objective(inst, X):
    """Variance objective ``sum a/x`` over pairs with positive weight."""
    a = design_weights(inst)
    supp = a > 0
    X = np.asarray(X, dtype=float)
    if np.any(X[supp] <= 0):
        return np.inf
    return float((a[supp] / X[supp]).sum())


def make_design(inst, kind, p=0.5, cfg=None):
    """Dispatch on ``kind`` in {"bernoulli", "unconstrained", "constrained"}."""
    if kind == "bernoulli":
        return bernoulli_design(inst.w0, inst.w1, p)
    if kind == "unconstrained":
        return unconstrained_optimal_design(inst)
    if kind == "constrained":
        return constrained_optimal_design(inst, cfg)
    raise ValueError(f"unknown design kind {kind!r}")
