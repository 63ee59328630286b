"""Synthetic instances, Monte-Carlo trials and parameter sweeps.

Instances follow the synthetic protocol: ``m = ceil(n * r1)`` items, both
candidate allocations drawn uniformly from one-hot rows, lognormal(0, 1/4)
costs and utilities with treated utilities doubled, budgets ``r2`` times the
larger of the two per-buyer allocation costs, and the first
``ceil(m * r3)`` items allocated identically by both candidates.

Seeding: instance ``k`` of a sweep uses streams ``(seed, k, ...)`` and trial
block ``t`` uses ``(seed, k, 0, t)``, independent of the grid point and the
number of workers.  Instances at different ``r1`` therefore share their
leading items, and all designs see the same uniforms.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from budgetab.design import make_design
from budgetab.estimators import trial_estimates
from budgetab.model import ProblemInstance, UtilityModel, expected_tte
from budgetab.online import online_design
from budgetab.sampling import THROTTLES, draw_trials, estimate_inclusion_probs, rng_for
from budgetab.solver import SolverConfig

log = logging.getLogger(__name__)

LOG_LOC, LOG_SCALE = 0.0, 0.25
ESTIMATORS = ("plugin", "ht", "hajek")
DESIGN_RE = re.compile(r"^(bernoulli|unconstrained|constrained|online)(?:\(([0-9.eE+-]+)\))?$")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n: int = 10
    r1: float = 20.0
    r2: float = 1.0
    r3: float = 0.0
    trials: int = 20_000
    instances: int = 20
    design: str = "constrained"
    p: float = 0.5
    throttle: str | None = None
    estimator: str = "plugin"
    utility_mode: str = "fixed"
    seed: int = 0
    exact_consistency: bool = False
    reps: int = 10_000
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ConfigError("n must be a positive integer")
        if not self.r1 > 0:
            raise ConfigError("r1 must be positive")
        if not self.r2 > 0:
            raise ConfigError("r2 must be positive")
        if not 0 <= self.r3 <= 1:
            raise ConfigError("r3 must lie in [0, 1]")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.instances < 1:
            raise ConfigError("instances must be at least 1")
        if not 0 <= self.p <= 1:
            raise ConfigError("p must lie in [0, 1]")
        kind, p = parse_design(self.design)
        if self.throttle is not None and self.throttle not in THROTTLES:
            raise ConfigError(f"throttle must be one of {THROTTLES}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.utility_mode not in ("fixed", "resample"):
            raise ConfigError("utility_mode must be 'fixed' or 'resample'")
        if self.exact_consistency and self.n < 2:
            raise ConfigError("exact_consistency needs n >= 2")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")

    @property
    def m(self):
        return math.ceil(self.n * self.r1 - 1e-9)

    @property
    def design_kind(self):
        return parse_design(self.design)[0]

    @property
    def design_p(self):
        p = parse_design(self.design)[1]
        return self.p if p is None else p

    @property
    def throttle_kind(self):
        if self.throttle is not None:
            return self.throttle
        return "greedy" if self.design_kind == "online" else "random"

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        d = dict(d)
        if "solver" in d and isinstance(d["solver"], dict):
            d["solver"] = SolverConfig(**d["solver"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)


def parse_design(spec):
    match = DESIGN_RE.match(str(spec).strip())
    if not match:
        raise ConfigError(f"unknown design {spec!r}")
    kind, p = match.groups()
    if p is not None:
        if kind != "bernoulli":
            raise ConfigError(f"design {kind!r} takes no parameter")
        p = float(p)
        if not 0 <= p <= 1:
            raise ConfigError("bernoulli probability must lie in [0, 1]")
    return kind, p


def _streams(seed):
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    return [rng_for(key[0], *key[1:], 1, s) for s in range(4)]


def generate_instance(cfg, seed):
    """Synthetic instance for ``cfg``; ``seed`` is an int or a tuple of ints.

    Each quantity has its own stream filled row by row, so the first ``k``
    items coincide for every ``r1`` giving ``m >= k``.
    """
    n, m = cfg.n, cfg.m
    g_w1, g_w0, g_c, g_u = _streams(seed)
    j1 = g_w1.integers(n, size=m)
    if cfg.exact_consistency:
        j0 = (j1 + 1 + g_w0.integers(n - 1, size=m)) % n
    else:
        j0 = g_w0.integers(n, size=m)
    forced = math.ceil(m * cfg.r3 - 1e-9)
    j0[:forced] = j1[:forced]
    eye = np.eye(n, dtype=np.int8)
    w1, w0 = eye[j1], eye[j0]
    costs = g_c.lognormal(LOG_LOC, LOG_SCALE, size=(m, n))
    base = g_u.lognormal(LOG_LOC, LOG_SCALE, size=(m, n))
    if cfg.utility_mode == "fixed":
        utility = UtilityModel.fixed(base * np.where(w1 == 1, 2.0, 1.0))
    else:
        utility = UtilityModel.lognormal(LOG_LOC + np.log(2.0) * w1, LOG_SCALE)
    spend = np.maximum((costs * w1).sum(axis=0), (costs * w0).sum(axis=0))
    # a buyer neither allocation uses never receives an item; any positive budget will do
    budgets = cfg.r2 * np.where(spend > 0, spend, costs.max(axis=0))
    meta = {"n": n, "r1": cfg.r1, "r2": cfg.r2, "r3": cfg.r3,
            "seed": list(seed) if isinstance(seed, (tuple, list)) else seed}
    return ProblemInstance(costs, budgets, w0, w1, utility, meta)


@dataclass
class SummaryStats:
    mean: float
    tte: float
    bias: float
    stddev: float
    mse: float
    rel_bias: float
    rel_stddev: float
    bias_se: float
    stddev_se: float
    trials: int
    undefined: int = 0
    m: int = 0

    def to_dict(self):
        return asdict(self)


def summarize(estimates, tte, m=0):
    """Bias, spread and MSE of Monte-Carlo estimates of ``tte``.

    Non-finite estimates (undefined Hajek ratios) are counted and excluded.
    """
    est = np.asarray(estimates, dtype=float)
    ok = np.isfinite(est)
    e = est[ok]
    T = e.size
    if T == 0:
        nan = float("nan")
        return SummaryStats(nan, tte, nan, nan, nan, nan, nan, nan, nan, 0, int((~ok).sum()), m)
    mean = float(e.mean())
    dev = e - mean
    var = float((dev**2).mean())
    sd = math.sqrt(var)
    mse = float(((e - tte) ** 2).mean())
    m4 = float((dev**4).mean())
    sd_se = math.sqrt(max(m4 - var**2, 0.0) / T) / (2 * sd) if sd > 0 else 0.0
    rel = (lambda v: v / tte) if tte != 0 else (lambda v: float("nan"))
    bias = mean - tte
    return SummaryStats(mean, tte, bias, sd, mse, rel(bias), rel(sd), sd / math.sqrt(T),
                        sd_se, T, int((~ok).sum()), m)


def design_matrix(inst, cfg):
    kind = cfg.design_kind
    if kind == "online":
        return online_design(inst, cfg.solver)
    return make_design(inst, kind, cfg.design_p, cfg.solver)


def trial_estimates_for(inst, cfg, key=(), X=None):
    """All per-trial estimates for one instance under ``cfg``."""
    X = design_matrix(inst, cfg) if X is None else X
    throttle = cfg.throttle_kind
    if cfg.estimator == "plugin":
        q = X
    else:
        q, _, _ = estimate_inclusion_probs(inst, X, throttle, cfg.reps, cfg.seed, (*key, 1))
    out = []
    for rng, _, kept in draw_trials(X, inst.costs, inst.budgets, throttle, cfg.trials,
                                    cfg.seed, (*key, 0)):
        out.append(trial_estimates(inst, q, kept, rng, cfg.estimator))
    return np.concatenate(out)


def run_trials(inst, cfg, key=(), X=None):
    """Simulate ``cfg.trials`` experiments on ``inst`` and summarise them."""
    est = trial_estimates_for(inst, cfg, key, X)
    return summarize(est, expected_tte(inst), inst.m)


# -- sweeps ------------------------------------------------------------------

CSV_FIELDS = ("r1", "r2", "r3", "design", "throttle", "estimator", "trials", "instances",
              "tte", "bias", "bias_se", "stddev", "stddev_se", "mse", "rel_bias",
              "rel_stddev", "abs_bias", "m")

PRESETS = {
    "fig3": {"r1": list(range(1, 31)), "r2": [1.0], "r3": [0.0],
             "designs": ["bernoulli(0.5)", "constrained"]},
    "fig4": {"r1": [20], "r2": [round(1 + 0.1 * k, 1) for k in range(10)], "r3": [0.0],
             "designs": ["constrained", "unconstrained"]},
    "fig5": {"r1": [5, 10, 15, 20, 25, 30], "r2": [1.0], "r3": [0.0],
             "designs": ["constrained", "online"]},
    "fig6": {"r1": [20], "r2": [1.0, 1.3, 1.6, 1.9],
             "r3": [round(0.1 * k, 1) for k in range(11)], "designs": ["constrained"]},
}


@dataclass(frozen=True)
class SweepSpec:
    r1: tuple
    r2: tuple
    r3: tuple
    designs: tuple
    base: SimConfig
    name: str = "sweep"

    def points(self):
        for r1 in self.r1:
            for r2 in self.r2:
                for r3 in self.r3:
                    yield r1, r2, r3

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        grid = dict(PRESETS[preset]) if preset else {}
        for k in ("r1", "r2", "r3", "designs"):
            if k in d:
                grid[k] = d.pop(k)
        missing = [k for k in ("r1", "r2", "r3", "designs") if k not in grid]
        if missing:
            raise ConfigError(f"sweep config missing {missing}")
        for k in ("r1", "r2", "r3", "designs"):
            if not isinstance(grid[k], list) or not grid[k]:
                raise ConfigError(f"{k} must be a non-empty list")
        for spec in grid["designs"]:
            parse_design(spec)
        base = SimConfig.from_dict(d)
        for r1, r2, r3 in product3(grid["r1"], grid["r2"], grid["r3"]):
            replace(base, r1=r1, r2=r2, r3=r3)
        return cls(tuple(grid["r1"]), tuple(grid["r2"]), tuple(grid["r3"]),
                   tuple(grid["designs"]), base, preset or "sweep")


def product3(a, b, c):
    return [(x, y, z) for x in a for y in b for z in c]


def _instance_task(args):
    base, r1, r2, r3, designs, k = args
    cfg = replace(base, r1=r1, r2=r2, r3=r3)
    inst = generate_instance(cfg, (cfg.seed, k))
    out = {}
    for spec in designs:
        dcfg = replace(cfg, design=spec)
        out[spec] = run_trials(inst, dcfg, key=(k,))
    return out


def grid_point_stats(base, r1, r2, r3, designs, jobs=1, executor=None):
    """Per-instance :class:`SummaryStats` for every design at one grid point."""
    tasks = [(base, r1, r2, r3, tuple(designs), k) for k in range(base.instances)]
    if executor is not None:
        results = list(executor.map(_instance_task, tasks))
    elif jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_instance_task, tasks))
    else:
        results = [_instance_task(t) for t in tasks]
    return {spec: [r[spec] for r in results] for spec in designs}


def aggregate(stats):
    """Average per-instance statistics into one sweep row."""
    K = len(stats)
    col = lambda name: np.array([getattr(s, name) for s in stats], dtype=float)
    tte = col("tte").mean()
    bias = col("bias").mean()
    sd = col("stddev").mean()
    return {
        "tte": tte,
        "bias": bias,
        "bias_se": math.sqrt((col("bias_se") ** 2).sum()) / K,
        "stddev": sd,
        "stddev_se": math.sqrt((col("stddev_se") ** 2).sum()) / K,
        "mse": col("mse").mean(),
        "rel_bias": bias / tte if tte else float("nan"),
        "rel_stddev": sd / tte if tte else float("nan"),
        "abs_bias": np.abs(col("bias")).mean(),
        "m": int(col("m").mean()),
    }


def sweep(spec, jobs=1, progress=None):
    """Run every grid point and design; returns one row dict per (point, design)."""
    rows = []
    points = list(spec.points())
    ex = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        for idx, (r1, r2, r3) in enumerate(points):
            stats = grid_point_stats(spec.base, r1, r2, r3, spec.designs, executor=ex)
            for d in spec.designs:
                cfg = replace(spec.base, r1=r1, r2=r2, r3=r3, design=d)
                row = {"r1": r1, "r2": r2, "r3": r3, "design": d,
                       "throttle": cfg.throttle_kind, "estimator": cfg.estimator,
                       "trials": cfg.trials, "instances": cfg.instances}
                row.update(aggregate(stats[d]))
                rows.append(row)
            if progress is not None:
                progress(idx + 1, len(points), (r1, r2, r3))
    finally:
        if ex is not None:
            ex.shutdown()
    return rows


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_FIELDS])
    return buf.getvalue()
