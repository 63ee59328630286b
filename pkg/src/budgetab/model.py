"""Problem instances, feasibility predicates and the total treatment effect.

Matrices are dense ``numpy`` arrays indexed ``[item, buyer]``.  Allocation
matrices are 0/1 with at most one nonzero per row, experiment matrices hold
per-item allocation probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9

UTILITY_MODES = ("resample", "fixed")


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UtilityModel:
    """Per-edge utility distribution.

    ``generator`` describes how a realised utility is produced:

    * ``{"kind": "fixed", "U": ...}`` -- a single realised matrix,
    * ``{"kind": "lognormal", "loc": ..., "scale": ...}`` -- ``exp(loc + scale * z)``,
    * ``{"kind": "two_point", "low": ..., "high": ..., "p_high": ...}``.

    ``mu`` and ``sigma2`` are the matching first two moments.
    """

    mu: np.ndarray
    sigma2: np.ndarray
    generator: dict
    mode: str = "resample"

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(self.mu))
        object.__setattr__(self, "sigma2", _frozen(self.sigma2))
        gen = {k: (_frozen(v) if isinstance(v, (list, np.ndarray)) else v)
               for k, v in self.generator.items()}
        object.__setattr__(self, "generator", gen)

    @classmethod
    def fixed(cls, U):
        U = np.asarray(U, dtype=float)
        return cls(mu=U, sigma2=np.zeros_like(U), generator={"kind": "fixed", "U": U},
                   mode="fixed")

    @classmethod
    def lognormal(cls, loc, scale):
        loc = np.asarray(loc, dtype=float)
        scale = np.broadcast_to(np.asarray(scale, dtype=float), loc.shape)
        s2 = scale**2
        mu = np.exp(loc + s2 / 2)
        var = np.expm1(s2) * np.exp(2 * loc + s2)
        return cls(mu=mu, sigma2=var,
                   generator={"kind": "lognormal", "loc": loc, "scale": np.array(scale)},
                   mode="resample")

    @classmethod
    def two_point(cls, low, high, p_high):
        low, high = np.asarray(low, dtype=float), np.asarray(high, dtype=float)
        p = np.broadcast_to(np.asarray(p_high, dtype=float), low.shape)
        mu = low + p * (high - low)
        var = p * (1 - p) * (high - low) ** 2
        return cls(mu=mu, sigma2=var,
                   generator={"kind": "two_point", "low": low, "high": high,
                              "p_high": np.array(p)},
                   mode="resample")

    @property
    def kind(self):
        return self.generator["kind"]

    def draw(self, rows, cols, rng):
        """Realised utilities for the edges ``(rows[k], cols[k])``."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        g = self.generator
        if g["kind"] == "fixed":
            return g["U"][rows, cols].astype(float)
        if g["kind"] == "lognormal":
            z = rng.standard_normal(rows.shape[0])
            return np.exp(g["loc"][rows, cols] + g["scale"][rows, cols] * z)
        if g["kind"] == "two_point":
            hit = rng.random(rows.shape[0]) < g["p_high"][rows, cols]
            return np.where(hit, g["high"][rows, cols], g["low"][rows, cols])
        raise ValueError(f"unknown utility generator {g['kind']!r}")

    def realize(self, rng):
        """Draw a complete utility matrix."""
        m, n = self.mu.shape
        rows, cols = np.divmod(np.arange(m * n), n)
        return self.draw(rows, cols, rng).reshape(m, n)


@dataclass(frozen=True)
class ProblemInstance:
    costs: np.ndarray
    budgets: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    utility: UtilityModel
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "costs", _frozen(self.costs))
        object.__setattr__(self, "budgets", _frozen(self.budgets))
        object.__setattr__(self, "w0", _frozen(self.w0, np.int8))
        object.__setattr__(self, "w1", _frozen(self.w1, np.int8))

    @property
    def m(self):
        return self.costs.shape[0]

    @property
    def n(self):
        return self.costs.shape[1]

    @property
    def support(self):
        """Pairs used by either candidate allocation."""
        return (self.w0 + self.w1) > 0

    def take_rows(self, rows):
        """Sub-instance on a subset of items (budgets unchanged)."""
        rows = np.asarray(rows)
        u = self.utility
        gen = {k: (v[rows] if isinstance(v, np.ndarray) and v.ndim == 2 else v)
               for k, v in u.generator.items()}
        util = UtilityModel(u.mu[rows], u.sigma2[rows], gen, u.mode)
        return ProblemInstance(self.costs[rows], self.budgets, self.w0[rows], self.w1[rows],
                               util, dict(self.meta))

    def with_budgets(self, budgets):
        return ProblemInstance(self.costs, budgets, self.w0, self.w1, self.utility,
                               dict(self.meta))


@dataclass(frozen=True)
class ObservationMatrix:
    values: np.ndarray
    allocation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "allocation", _frozen(self.allocation, np.int8))


def _check_shapes(W, C, b):
    W = np.asarray(W)
    C = np.asarray(C)
    b = np.asarray(b)
    if W.shape != C.shape or W.ndim != 2 or b.shape != (C.shape[1],):
        raise ValueError(f"dimension mismatch: W{W.shape}, C{C.shape}, b{b.shape}")
    return W, C, b


def is_budget_satisfying(W, C, b, tol=FEAS_TOL):
    """True iff no buyer's realised spend exceeds its budget."""
    W, C, b = _check_shapes(W, C, b)
    return bool(np.all((C * W).sum(axis=0) <= b + tol))


def is_expected_budget_satisfying(X, C, b, tol=FEAS_TOL):
    """True iff every buyer's expected spend under ``X`` fits its budget."""
    X, C, b = _check_shapes(X, C, b)
    return bool(np.all((C * X).sum(axis=0) <= b + tol))


def allocation_violations(W, name="W"):
    W = np.asarray(W)
    out = []
    if W.ndim != 2:
        return [f"{name} must be a 2-d matrix"]
    if not np.all((W == 0) | (W == 1)):
        out.append(f"{name} entries must be 0 or 1")
    bad = np.flatnonzero(W.sum(axis=1) > 1)
    if bad.size:
        out.append(f"{name} row-stochasticity violated: rows {bad[:5].tolist()} sum to more than 1")
    return out


def experiment_violations(X, tol=FEAS_TOL):
    X = np.asarray(X, dtype=float)
    out = []
    if X.ndim != 2:
        return ["X must be a 2-d matrix"]
    if np.any(X < 0) or np.any(X > 1 + tol):
        out.append("X entries must lie in [0, 1]")
    bad = np.flatnonzero(X.sum(axis=1) > 1 + tol)
    if bad.size:
        out.append(f"X row sums exceed 1 on rows {bad[:5].tolist()}")
    return out


def validate_instance(inst):
    """List every violated invariant of ``inst``; empty when valid."""
    report = []
    C, b = np.asarray(inst.costs), np.asarray(inst.budgets)
    if C.ndim != 2:
        return ["costs must be an m x n matrix"]
    m, n = C.shape
    for name, M in (("w0", inst.w0), ("w1", inst.w1), ("utility.mu", inst.utility.mu),
                    ("utility.sigma2", inst.utility.sigma2)):
        if np.shape(M) != (m, n):
            report.append(f"dimension mismatch: {name} has shape {np.shape(M)}, expected {(m, n)}")
    if b.shape != (n,):
        report.append(f"dimension mismatch: budgets has shape {b.shape}, expected {(n,)}")
    if report:
        return report
    if np.any(~np.isfinite(C)) or np.any(C < 0):
        report.append("costs must be finite and nonnegative")
    if np.any(~(b > 0)):
        bad = np.flatnonzero(~(b > 0)).tolist()
        report.append(f"budget must be positive (buyers {bad})")
    for name, W in (("w0", inst.w0), ("w1", inst.w1)):
        viol = allocation_violations(W, name)
        report += viol
        if not viol and np.all(b > 0) and not is_budget_satisfying(W, C, b):
            report.append(f"{name} is not budget-satisfying")
    u = inst.utility
    if u.mode not in UTILITY_MODES:
        report.append(f"utility mode must be one of {UTILITY_MODES}")
    if np.any(u.sigma2 < 0):
        report.append("utility variances must be nonnegative")
    if u.mode == "fixed":
        U = u.generator.get("U")
        if u.kind != "fixed" or U is None or not np.array_equal(U, u.mu):
            report.append("fixed-realization mode requires the stored U to equal mu")
        if np.any(u.sigma2 != 0):
            report.append("fixed-realization mode requires sigma2 == 0")
    return report


def expected_tte(inst):
    """Total treatment effect in expectation over utilities."""
    mu = inst.utility.mu
    return float((mu * inst.w1).sum() - (mu * inst.w0).sum())


def realized_tte(inst, U):
    U = np.asarray(U, dtype=float)
    if U.shape != inst.costs.shape:
        raise ValueError(f"dimension mismatch: U{U.shape} vs {inst.costs.shape}")
    return float((U * (inst.w1.astype(float) - inst.w0)).sum())


# -- serialisation -----------------------------------------------------------

def _tolist(v):
    return v.tolist() if isinstance(v, np.ndarray) else v


def instance_to_dict(inst):
    u = inst.utility
    return {
        "m": inst.m,
        "n": inst.n,
        "costs": inst.costs.tolist(),
        "budgets": inst.budgets.tolist(),
        "w0": inst.w0.tolist(),
        "w1": inst.w1.tolist(),
        "utility": {
            "mu": u.mu.tolist(),
            "sigma2": u.sigma2.tolist(),
            "generator": {k: _tolist(v) for k, v in u.generator.items()},
            "mode": u.mode,
        },
        "meta": inst.meta,
    }


def instance_from_dict(d):
    u = d["utility"]
    gen = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v)
           for k, v in u["generator"].items()}
    util = UtilityModel(mu=np.asarray(u["mu"], dtype=float),
                        sigma2=np.asarray(u["sigma2"], dtype=float),
                        generator=gen, mode=u.get("mode", "resample"))
    inst = ProblemInstance(costs=np.asarray(d["costs"], dtype=float),
                           budgets=np.asarray(d["budgets"], dtype=float),
                           w0=np.asarray(d["w0"]), w1=np.asarray(d["w1"]),
                           utility=util, meta=d.get("meta", {}))
    if "m" in d and d["m"] != inst.m or "n" in d and d["n"] != inst.n:
        raise ValueError("declared m/n do not match matrix shapes")
    return inst


def save_instance(inst, path):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh)
        fh.write("\n")


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def matrix_to_json(X):
    return json.dumps({"shape": list(np.shape(X)), "X": np.asarray(X).tolist()})


def matrix_from_json(text):
    d = json.loads(text)
    return np.asarray(d["X"], dtype=float).reshape(d["shape"])
