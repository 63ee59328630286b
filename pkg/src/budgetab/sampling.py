"""Sampling allocations from an experiment matrix and observing utilities."""

from __future__ import annotations

import itertools
import math

import numpy as np

from budgetab import kernels
from budgetab.model import FEAS_TOL, ObservationMatrix
from budgetab.throttle import _throttle_in_order

THROTTLES = ("random", "sequential", "greedy", "none")
BLOCK = 1000


def rng_for(seed, *key):
    """Generator for stream ``key`` under master ``seed``.

    Streams are addressed by counters (instance index, block index, ...), so a
    result never depends on how work is scheduled.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _check_rows(X, tol=FEAS_TOL):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    bad = np.flatnonzero(X.sum(axis=1) > 1 + tol)
    if bad.size:
        raise ValueError(f"row sums of X exceed 1 on rows {bad[:5].tolist()}")
    if np.any(X < 0):
        raise ValueError("X has negative entries")
    return X


def sample_allocation(X, rng):
    """Draw each row's buyer independently; a row aborts with the leftover mass."""
    X = _check_rows(X)
    m, n = X.shape
    cum = np.cumsum(X, axis=1)
    u = rng.random(m)
    j = (cum <= u[:, None]).sum(axis=1)
    W = np.zeros((m, n), dtype=np.int8)
    hit = j < n
    W[np.flatnonzero(hit), j[hit]] = 1
    return W


def observe(W, utility, rng):
    """Observation matrix: realised utilities on allocated edges, zero elsewhere."""
    W = np.asarray(W)
    rows, cols = np.nonzero(W)
    O = np.zeros(W.shape)
    if rows.size:
        O[rows, cols] = utility.draw(rows, cols, rng)
    return ObservationMatrix(O, W)


def throttle_once(W, C, b, kind, rng=None, tol=FEAS_TOL):
    m = np.shape(W)[0]
    if kind == "none":
        return np.asarray(W, dtype=np.int8)
    if kind == "random":
        return _throttle_in_order(W, C, b, rng.permutation(m), False, tol)
    if kind == "sequential":
        return _throttle_in_order(W, C, b, np.arange(m), False, tol)
    if kind == "greedy":
        return _throttle_in_order(W, C, b, np.arange(m), True, tol)
    raise ValueError(f"unknown throttle kind {kind!r}")


def draw_trials(X, C, b, throttle, trials, seed, key=(), order=None, block=BLOCK,
                tol=FEAS_TOL):
    """Yield ``(rng, sampled, kept)`` for consecutive blocks of trials.

    ``sampled[t, i]`` is the buyer item ``i`` was drawn to in trial ``t`` (-1 on
    abort) and ``kept[t, i]`` the buyer it reached after throttling.  ``order``
    fixes the processing order for the sequential kinds (default: item index).
    The yielded generator continues the block's stream, for utility draws.
    """
    if throttle not in THROTTLES:
        raise ValueError(f"unknown throttle kind {throttle!r}")
    X = _check_rows(X)
    m, n = X.shape
    cumx = np.cumsum(X, axis=1)
    C = np.asarray(C, dtype=float)
    budget = np.asarray(b, dtype=float)
    if throttle == "none":
        budget = np.full(n, np.inf)
    base = np.arange(m) if order is None else np.asarray(order)
    for start in range(0, trials, block):
        T = min(block, trials - start)
        rng = rng_for(seed, *key, start // block)
        unif = rng.random((T, m))
        if throttle == "random":
            perms = rng.permuted(np.tile(np.arange(m), (T, 1)), axis=1)
        else:
            perms = base[None, :]
        sampled, kept = kernels.draw_block(cumx, C, budget, unif, perms,
                                           throttle == "greedy", tol)
        yield rng, sampled, kept


def estimate_inclusion_probs(inst, X, throttle="random", reps=10_000, seed=0, key=()):
    """Replication estimate of ``Pr(item i reaches buyer j)``.

    Returns ``(P_hat, se, alloc_freq)`` where ``alloc_freq`` is the
    pre-throttling allocation frequency from the same replications.
    """
    m, n = inst.m, inst.n
    hits = np.zeros(m * n)
    drawn = np.zeros(m * n)
    offs = (np.arange(m) * n)[None, :]
    for _, sampled, kept in draw_trials(X, inst.costs, inst.budgets, throttle, reps, seed, key):
        k = kept >= 0
        hits += np.bincount((offs + kept)[k], minlength=m * n)
        s = sampled >= 0
        drawn += np.bincount((offs + sampled)[s], minlength=m * n)
    P = (hits / reps).reshape(m, n)
    se = np.sqrt(P * (1 - P) / reps)
    return P, se, (drawn / reps).reshape(m, n)


def enumerate_outcomes(X, C, b, throttle):
    """Exact distribution of the throttled allocation.

    Returns a list of ``(probability, W_after)``.  Enumerates every per-row
    outcome (buyer or abort) and, for random throttling, every permutation;
    only meant for a handful of items.
    """
    X = _check_rows(X)
    m, n = X.shape
    choices = []
    for i in range(m):
        opts = [(j, X[i, j]) for j in range(n) if X[i, j] > 0]
        rest = 1.0 - X[i].sum()
        if rest > 0:
            opts.append((-1, rest))
        choices.append(opts)
    perms = list(itertools.permutations(range(m))) if throttle == "random" else [None]
    out = []
    for combo in itertools.product(*choices):
        p = math.prod(q for _, q in combo)
        W = np.zeros((m, n), dtype=np.int8)
        for i, (j, _) in enumerate(combo):
            if j >= 0:
                W[i, j] = 1
        if throttle == "random":
            for perm in perms:
                out.append((p / len(perms), _throttle_in_order(W, C, b, np.array(perm), False,
                                                               FEAS_TOL)))
        else:
            out.append((p, throttle_once(W, C, b, throttle)))
    return out


def exact_inclusion_probs(X, C, b, throttle):
    P = np.zeros(np.shape(X))
    for p, W in enumerate_outcomes(X, C, b, throttle):
        P += p * W
    return P
