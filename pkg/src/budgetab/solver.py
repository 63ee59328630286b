"""Separable convex solver for variance-minimising experiment matrices.

Solves::

    minimise    sum_{a_ij > 0} a_ij / x_ij
    subject to  eps <= x_ij <= 1          on the support (a_ij > 0)
                x_ij = 0                  off the support
                sum_j x_ij <= 1           for every item i
                sum_i c_ij x_ij <= b_j    for every buyer j

by ascent on the Lagrange dual.  For fixed budget multipliers ``lam`` each
row decouples: its minimiser is ``x_ij = clamp(sqrt(a_ij / (mu_i + lam_j c_ij)),
eps, 1)`` with ``mu_i`` found by bisection (see :mod:`budgetab.kernels`).
The remaining concave problem in ``lam`` (one variable per buyer) is solved
by projected Newton steps, falling back to exact coordinate maximisation when
a Newton step fails to make progress.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from budgetab import kernels
from budgetab.model import FEAS_TOL


@dataclass(frozen=True)
class SolverConfig:
    kkt_tolerance: float = 1e-7
    max_iterations: int = 200
    eps_floor: float = 1e-6
    dual_step: str = "newton"  # "newton" or "coordinate"

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if not 0 < self.eps_floor < 1:
            raise ValueError("eps_floor must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.dual_step not in ("newton", "coordinate"):
            raise ValueError(f"unknown dual_step {self.dual_step!r}")


@dataclass
class SolverCertificate:
    objective: float
    dual_objective: float
    row_duals: np.ndarray
    budget_duals: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def duality_gap(self):
        return self.objective - self.dual_objective

    @property
    def relative_gap(self):
        return self.duality_gap / max(abs(self.objective), 1e-300)

    def to_dict(self):
        return {
            "objective": self.objective,
            "dual_objective": self.dual_objective,
            "duality_gap": self.duality_gap,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "row_duals": self.row_duals.tolist(),
            "budget_duals": self.budget_duals.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())


class SolverError(RuntimeError):
    def __init__(self, message, x=None, certificate=None):
        super().__init__(message)
        self.x = x
        self.certificate = certificate


def _clamped_stationary(a, d, eps):
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.clip(np.sqrt(a / d), eps, 1.0)
    return np.where(d <= 0, 1.0, v)


def kkt_residual(x, a, C, b, duals, eps_floor=SolverConfig.eps_floor):
    """Largest violation of the optimality conditions at ``(x, duals)``.

    ``duals`` is ``(mu, lam)``: row and budget multipliers.  Stationarity is
    measured in ``x`` units as the distance from the clamped stationary point,
    complementary slackness as multiplier times constraint slack.
    """
    x, a, C, b = (np.asarray(v, dtype=float) for v in (x, a, C, b))
    mu, lam = (np.asarray(v, dtype=float) for v in duals)
    supp = a > 0
    d = mu[:, None] + lam[None, :] * C
    target = _clamped_stationary(np.where(supp, a, 1.0), d, eps_floor)
    stationarity = np.abs(np.where(supp, x - target, x))
    rows = x.sum(axis=1) - 1.0
    spend = (C * x).sum(axis=0) - b
    parts = [
        stationarity.max(initial=0.0),
        np.maximum(rows, 0).max(initial=0.0),
        np.maximum(spend, 0).max(initial=0.0),
        np.maximum(x - 1.0, 0).max(initial=0.0),
        np.maximum(-x, 0).max(initial=0.0),
        np.maximum(-mu, 0).max(initial=0.0),
        np.maximum(-lam, 0).max(initial=0.0),
        np.abs(mu * rows).max(initial=0.0),
        np.abs(lam * spend).max(initial=0.0),
    ]
    return float(max(parts))


class _Dual:
    """Dual function of one problem, evaluated through the row kernel."""

    def __init__(self, a, C, b, eps):
        self.m, self.n = a.shape
        r, c = np.nonzero(a > 0)
        self.rows, self.cols = r, c
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=self.m))])
        self.a = a[r, c].astype(float)
        self.c = C[r, c].astype(float)
        self.b = b.astype(float)
        self.eps = eps
        self.evals = 0

    def __call__(self, lam):
        self.evals += 1
        x, mu = kernels.row_solve(self.indptr, self.cols, self.a, self.c, lam, self.eps)
        g = np.bincount(self.cols, self.c * x, minlength=self.n) - self.b
        d = mu[self.rows] + lam[self.cols] * self.c
        h = float((self.a / x + d * x).sum() - mu.sum() - lam @ self.b)
        return _State(lam, x, mu, g, h)

    def merit(self, s):
        pg = np.where(s.lam > 0, np.abs(s.g), np.maximum(s.g, 0.0))
        return float(pg.max(initial=0.0))

    def hessian(self, s):
        d = s.mu[self.rows] + s.lam[self.cols] * self.c
        free = (s.x > self.eps) & (s.x < 1.0) & (d > 0)
        k = np.where(free, s.x**3 / (2 * self.a), 0.0)
        H = -np.diag(np.bincount(self.cols, k * self.c**2, minlength=self.n))
        K = np.bincount(self.rows, k, minlength=self.m)
        act = (s.mu > 0) & (K > 0)
        if act.any():
            V = np.zeros((self.m, self.n))
            V[self.rows, self.cols] = k * self.c
            V = V[act]
            H += (V / K[act, None]).T @ V
        return H

    def dense(self, values):
        out = np.zeros((self.m, self.n))
        out[self.rows, self.cols] = values
        return out


@dataclass
class _State:
    lam: np.ndarray
    x: np.ndarray
    mu: np.ndarray
    g: np.ndarray
    h: float


def _coordinate_sweep(dual, s, tol):
    """Exactly maximise the dual in each budget multiplier in turn."""
    for j in range(dual.n):
        lam = s.lam.copy()
        if s.g[j] <= 0 and lam[j] == 0:
            continue
        lam[j] = 0.0
        t = dual(lam)
        if t.g[j] <= 0:
            s = t if t.h >= s.h else s
            continue
        lo, hi = 0.0, max(s.lam[j], 1.0)
        while True:
            lam[j] = hi
            t = dual(lam)
            if t.g[j] <= 0:
                break
            lo, hi = hi, 2.0 * hi
            if hi > 1e300:
                raise SolverError(f"budget of buyer {j} cannot be met")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            lam[j] = mid
            t = dual(lam)
            if t.g[j] > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi and abs(t.g[j]) <= tol:
                break
        lam[j] = hi
        t = dual(lam)
        if t.h >= s.h - 1e-12 * max(1.0, abs(s.h)):
            s = t
    return s


def _newton_step(dual, s, merit):
    free = (s.lam > 0) | (s.g > 0)
    if not free.any():
        return None
    H = dual.hessian(s)[np.ix_(free, free)]
    scale = max(1.0, float(np.abs(np.diag(H)).max(initial=0.0)))
    try:
        step = np.linalg.solve(H - 1e-12 * scale * np.eye(H.shape[0]), -s.g[free])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(step)):
        return None
    t = 1.0
    floor = s.h - 1e-12 * max(1.0, abs(s.h))
    for _ in range(40):
        lam = s.lam.copy()
        lam[free] = np.maximum(lam[free] + t * step, 0.0)
        cand = dual(lam)
        if cand.h >= floor and dual.merit(cand) < merit:
            return cand
        t *= 0.5
    return None


def solve_separable(a, C, b, cfg=None, warm_start=None):
    """Minimise ``sum a/x`` over the box-simplex-budget polytope.

    Returns ``(X, certificate)``.  A non-converged run returns the best iterate
    with ``certificate.converged == False``; an infeasible budget (the floor
    alone overspends) raises :class:`SolverError`.
    """
    cfg = cfg or SolverConfig()
    a = np.asarray(a, dtype=float)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != C.shape or b.shape != (a.shape[1],):
        raise ValueError(f"dimension mismatch: a{a.shape}, C{C.shape}, b{b.shape}")
    if np.any(a < 0) or not np.any(a > 0):
        raise ValueError("weights must be nonnegative with at least one positive entry")

    dual = _Dual(a, C, b, cfg.eps_floor)
    floor_spend = np.bincount(dual.cols, dual.c * cfg.eps_floor, minlength=dual.n)
    if np.any(floor_spend > b + FEAS_TOL):
        bad = np.flatnonzero(floor_spend > b + FEAS_TOL).tolist()
        raise SolverError(f"infeasible: support floor exceeds budget of buyers {bad}")

    lam0 = np.zeros(dual.n) if warm_start is None else np.maximum(np.asarray(warm_start, float), 0)
    s = dual(lam0)
    history = [s.h]
    target = min(0.1 * FEAS_TOL, cfg.kkt_tolerance)
    it = 0
    while it < cfg.max_iterations:
        merit = dual.merit(s)
        if merit <= target:
            break
        it += 1
        nxt = _newton_step(dual, s, merit) if cfg.dual_step == "newton" else None
        if nxt is None:
            nxt = _coordinate_sweep(dual, s, target)
        if nxt is s or dual.merit(nxt) >= merit and nxt.h <= s.h:
            s = nxt
            history.append(s.h)
            break
        s = nxt
        history.append(s.h)

    X = dual.dense(s.x)
    objective = float((dual.a / s.x).sum())
    resid = kkt_residual(X, a, C, b, (s.mu, s.lam), cfg.eps_floor)
    cert = SolverCertificate(
        objective=objective,
        dual_objective=s.h,
        row_duals=s.mu,
        budget_duals=s.lam,
        kkt_residual=resid,
        iterations=it,
        converged=bool(resid <= cfg.kkt_tolerance and dual.merit(s) <= FEAS_TOL),
        history=history,
    )
    return X, cert


def grid_oracle(a, C, b, resolution=1e-3, max_cells=8, tol=FEAS_TOL):
    """Brute-force minimiser of ``sum a/x`` on the lattice ``resolution * Z``.

    The objective falls in every coordinate, so once the other entries are
    fixed the best value of the last support entry is its largest feasible
    lattice value.  The remaining entries are searched exhaustively on a
    coarse lattice, then exhaustively in shrinking windows around the best
    few points, ending with a local search on the finest lattice.  Entries
    with ``a == 0`` are fixed at zero.  Returns ``(x, objective)``.
    """
    a = np.asarray(a, dtype=float)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape
    if m * n > max_cells:
        raise ValueError(f"grid oracle limited to {max_cells} cells, got {m * n}")
    idx = np.argwhere(a > 0)
    k = len(idx)
    if k == 0:
        raise ValueError("no positive weights")
    A = a[idx[:, 0], idx[:, 1]]
    Cs = C[idx[:, 0], idx[:, 1]]
    top = int(round(1.0 / resolution))
    ti, tj = idx[-1]
    same_row = idx[:-1, 0] == ti
    same_col = idx[:-1, 1] == tj

    def complete(Z):
        # append the largest feasible value of the last entry (0 if none)
        P = Z * resolution
        row_room = 1.0 - P[:, same_row].sum(axis=1)
        col_room = (b[tj] - (P[:, same_col] * Cs[:-1][same_col]).sum(axis=1)) / Cs[-1]
        room = np.minimum(np.minimum(row_room, col_room), 1.0)
        last = np.floor((room + tol) / resolution + 1e-9).astype(np.int64)
        return np.column_stack([Z, np.clip(last, 0, top)])

    def evaluate(Z):
        Z = complete(Z)
        P = Z * resolution
        ok = np.all(Z >= 1, axis=1)
        for i in range(m):
            g = idx[:, 0] == i
            if g.any():
                ok &= P[:, g].sum(axis=1) <= 1 + tol
        for j in range(n):
            g = idx[:, 1] == j
            if g.any():
                ok &= (P[:, g] * Cs[g]).sum(axis=1) <= b[j] + tol
        with np.errstate(divide="ignore"):
            f = np.where(ok, (A / np.maximum(P, 1e-300)).sum(axis=1), np.inf)
        return f, Z

    free = k - 1
    if free == 0:
        f, Z = evaluate(np.zeros((1, 0), dtype=np.int64))
        best_Z, best_f = Z[0], f[0]
    else:
        def lattice(centers, step, width):
            offsets = np.arange(-width, width + 1) * step
            grid = np.stack(np.meshgrid(*([offsets] * free), indexing="ij"), -1)
            Z = (centers[:, None, :] + grid.reshape(-1, free)[None]).reshape(-1, free)
            return Z[np.all((Z >= 1) & (Z <= top), axis=1)]

        width = 1
        while width < top and 4 * (2 * width + 3) ** free <= 400_000:
            width += 1
        step = max(1, top // 8)
        levels = np.unique(np.r_[1, np.arange(step, top + 1, step)])
        Z = np.stack(np.meshgrid(*([levels] * free), indexing="ij"), -1).reshape(-1, free)
        keep = 4
        while True:
            f, full = evaluate(Z)
            order = np.argsort(f, kind="stable")[:keep]
            order = order[np.isfinite(f[order])]
            if order.size == 0:
                raise ValueError("no feasible lattice point")
            best_Z, best_f = full[order[0]], f[order[0]]
            if step == 1:
                break
            step = max(1, step // 2)
            Z = lattice(Z[order], step, width)
        while True:
            f, full = evaluate(lattice(best_Z[None, :-1], 1, width))
            i = int(np.argmin(f))
            if not f[i] < best_f:
                break
            best_Z, best_f = full[i], f[i]
    if not np.isfinite(best_f):
        raise ValueError("no feasible lattice point")
    x = np.zeros((m, n))
    x[idx[:, 0], idx[:, 1]] = best_Z * resolution
    return x, float(best_f)
