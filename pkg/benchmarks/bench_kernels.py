"""Compare the compiled and pure-Python kernels on synthetic instances.

    python benchmarks/bench_kernels.py [--m 300] [--n 10] [--trials 5000] [--repeat 3]

Prints the best-of-``repeat`` wall time per kernel and backend, the speedup,
and whether both backends returned identical arrays.
"""

import argparse
import time

import numpy as np

from budgetab import kernels
from budgetab.design import design_weights, make_design
from budgetab.sampling import rng_for
from budgetab.sim import SimConfig, generate_instance
from budgetab.solver import solve_separable


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--m", type=int, default=300)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--trials", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = SimConfig(n=args.n, r1=args.m / args.n)
    inst = generate_instance(cfg, (0, 0))
    a = design_weights(inst)
    X = make_design(inst, "bernoulli", 0.5)
    cumx = np.cumsum(X, axis=1)
    rng = rng_for(0, 9)
    unif = rng.random((args.trials, inst.m))
    perms = rng.permuted(np.tile(np.arange(inst.m), (args.trials, 1)), axis=1)
    lam = np.full(inst.n, 0.5)

    cases = {
        "solve_separable": lambda: solve_separable(a, inst.costs, inst.budgets)[0],
        "row_solve": lambda: kernels.row_solve(*_csr(a), a[a > 0], inst.costs[a > 0], lam,
                                               1e-6)[0],
        "draw_block": lambda: kernels.draw_block(cumx, inst.costs, inst.budgets, unif, perms,
                                                 False, 1e-9)[1],
    }
    backends = kernels.available_backends()
    active = kernels.backend()
    print(f"m={inst.m} n={inst.n} trials={args.trials} backends={backends}")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}  identical")
    for name, fn in cases.items():
        times, outs = [], []
        for b in backends:
            kernels.use_backend(b)
            t, out = best_of(fn, args.repeat)
            times.append(t)
            outs.append(out)
        kernels.use_backend(active)
        same = all(np.array_equal(outs[0], o) for o in outs[1:])
        speed = times[-1] / times[0] if len(times) > 1 else 1.0
        print(f"{name:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
              + f"{speed:>9.1f}x  {same}")


def _csr(a):
    supp = a > 0
    indptr = np.concatenate([[0], np.cumsum(supp.sum(axis=1))]).astype(np.intp)
    cols = np.nonzero(supp)[1].astype(np.intp)
    return indptr, cols


if __name__ == "__main__":
    main()
