"""Streaming experiment design with proportionally scaled budgets.

Items arrive one at a time.  At step ``k`` (1-based) the variance problem is
re-solved on the ``k`` items seen so far with budgets ``k * b / m``; the
newest item's row of that solution is its allocation distribution.  A
sampled buyer is served only if the spend still fits the budget, otherwise
the item is dropped.  The estimate divides by the rows actually used.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from budgetab.design import design_weights
from budgetab.estimators import plugin_estimator
from budgetab.model import FEAS_TOL, ObservationMatrix
from budgetab.solver import SolverConfig, SolverError, solve_separable


class OnlineError(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"solver failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class StreamItem:
    step: int
    index: int
    costs: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    utility: object

    def draw_utility(self, j, rng):
        return float(self.utility.draw([self.index], [j], rng)[0])


def _check_perm(perm, m):
    perm = np.asarray(perm)
    if perm.shape != (m,) or not np.array_equal(np.sort(perm), np.arange(m)):
        raise ValueError(f"not a permutation of range({m})")
    return perm.astype(np.int64)


def replay_stream(inst, permutation=None):
    """Yield the instance's items in ``permutation`` order."""
    perm = np.arange(inst.m) if permutation is None else _check_perm(permutation, inst.m)
    for step, i in enumerate(perm):
        yield StreamItem(step, int(i), inst.costs[i], inst.w0[i], inst.w1[i], inst.utility)


@dataclass
class StreamState:
    """History of a run: revealed rows, spend so far and the rows used."""

    n: int
    budgets: np.ndarray
    items: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    spent: np.ndarray = None
    duals: np.ndarray = None
    solves: int = 0

    def __post_init__(self):
        if self.spent is None:
            self.spent = np.zeros(self.n)

    @property
    def step(self):
        return len(self.rows)


class OnlineDesigner:
    """Computes each arriving item's row from the prefix problem."""

    def __init__(self, inst, cfg=None, warm_start=True):
        self.cfg = cfg or SolverConfig()
        self.m = inst.m
        self.weights = design_weights(inst)
        self.warm_start = warm_start
        self.state = StreamState(inst.n, np.asarray(inst.budgets, dtype=float))

    def next_row(self, item):
        st = self.state
        st.items.append(item.index)
        st.weights.append(self.weights[item.index])
        st.costs.append(item.costs)
        k = len(st.items)
        a = np.array(st.weights)
        if not a[-1].any():
            row = np.zeros(st.n)
        else:
            scaled = k * st.budgets / self.m
            try:
                X, cert = solve_separable(a, np.array(st.costs), scaled, self.cfg,
                                          warm_start=st.duals if self.warm_start else None)
            except SolverError as exc:
                raise OnlineError(k, exc) from exc
            st.solves += 1
            if not cert.converged:
                raise OnlineError(k, f"KKT residual {cert.kkt_residual:.3g}")
            st.duals = cert.budget_duals
            row = X[-1]
        st.rows.append(row)
        return row


def online_design(inst, cfg=None, order=None, warm_start=True):
    """Experiment matrix produced by the streaming rule (indexed by item).

    The rows depend only on revealed items and budgets, never on sampled
    outcomes, so they can be computed once and reused across trials.
    """
    designer = OnlineDesigner(inst, cfg, warm_start)
    X = np.zeros((inst.m, inst.n))
    for item in replay_stream(inst, order):
        X[item.index] = designer.next_row(item)
    return X


@dataclass
class OnlineResult:
    X: np.ndarray
    observations: ObservationMatrix
    estimate: float
    trace: list
    solves: int
    rejected: int


TRACE_FIELDS = ("step", "item", "buyer", "feasible", "spend", "observed")


def online_run(inst, cfg=None, rng=None, order=None, warm_start=True, on_step=None):
    """One streaming experiment: design, sample, feasibility-test, observe, estimate.

    ``on_step`` receives each trace row as it is produced (so a partial trace
    survives a mid-stream failure).
    """
    rng = rng if rng is not None else np.random.default_rng()
    designer = OnlineDesigner(inst, cfg, warm_start)
    m, n = inst.m, inst.n
    X = np.zeros((m, n))
    O = np.zeros((m, n))
    W = np.zeros((m, n), dtype=np.int8)
    spent = designer.state.spent
    budgets = designer.state.budgets
    trace = []
    rejected = 0
    for item in replay_stream(inst, order):
        row = designer.next_row(item)
        i = item.index
        X[i] = row
        cum = np.cumsum(row)
        u = rng.random()
        j = int((cum <= u).sum())
        feasible = False
        observed = 0.0
        if j < n:
            if item.costs[j] + spent[j] <= budgets[j] + FEAS_TOL:
                feasible = True
                spent[j] += item.costs[j]
                W[i, j] = 1
                observed = item.draw_utility(j, rng)
                O[i, j] = observed
            else:
                rejected += 1
        rec = {"step": item.step + 1, "item": i, "buyer": j if j < n else -1,
               "feasible": int(feasible), "spend": float(spent[j]) if j < n else 0.0,
               "observed": observed}
        trace.append(rec)
        if on_step is not None:
            on_step(rec)
    est = plugin_estimator(O, inst.w1, inst.w0, X)
    return OnlineResult(X, ObservationMatrix(O, W), est, trace, designer.state.solves, rejected)


def write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        w.writerows(trace)
