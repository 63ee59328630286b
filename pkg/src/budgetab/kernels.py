"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``BUDGETAB_BACKEND``
to ``python`` forces the numpy fallback.  :func:`use_backend` switches at
runtime (tests and the benchmark compare both).
"""

import logging
import os

import numpy as np

from budgetab import _fallback

log = logging.getLogger(__name__)

try:
    from budgetab import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

_BACKENDS = {"python": _fallback}
if _core is not None:
    _BACKENDS["compiled"] = _core

_active = None


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Select ``"compiled"`` or ``"python"`` for subsequent kernel calls."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    _active = name


def backend():
    return _active


def _module():
    return _BACKENDS[_active]


def row_solve(indptr, cols, a, c, lam, eps):
    """Return ``(x, mu)`` minimising the row Lagrangian at budget duals ``lam``."""
    x = np.empty(a.shape[0])
    mu = np.empty(indptr.shape[0] - 1)
    _module().row_solve(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(cols, dtype=np.int64),
        np.ascontiguousarray(a, dtype=np.float64),
        np.ascontiguousarray(c, dtype=np.float64),
        np.ascontiguousarray(lam, dtype=np.float64),
        float(eps),
        x,
        mu,
    )
    return x, mu


def draw_block(cumx, cost, budget, unif, order, greedy, tol):
    """Return ``(sampled, kept)`` buyer indices of shape ``unif.shape``."""
    order = np.atleast_2d(np.ascontiguousarray(order, dtype=np.int64))
    T, m = unif.shape
    sampled = np.empty((T, m), dtype=np.intc)
    kept = np.empty((T, m), dtype=np.intc)
    _module().draw_block(
        np.ascontiguousarray(cumx, dtype=np.float64),
        np.ascontiguousarray(cost, dtype=np.float64),
        np.ascontiguousarray(budget, dtype=np.float64),
        np.ascontiguousarray(unif, dtype=np.float64),
        order,
        bool(greedy),
        float(tol),
        sampled,
        kept,
    )
    return sampled, kept


_requested = os.environ.get("BUDGETAB_BACKEND", "").strip().lower()
if _requested:
    use_backend(_requested)
else:
    use_backend("compiled" if _core is not None else "python")
log.debug("kernel backend: %s", _active)
