"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 solver failure.
"""

import argparse
import json
import logging
import os
import secrets
import sys
from dataclasses import replace

import numpy as np

from budgetab import kernels
from budgetab.design import constrained_optimal_design, make_design
from budgetab.model import expected_tte, load_instance, save_instance, validate_instance
from budgetab.online import OnlineError, TRACE_FIELDS, online_run
from budgetab.sampling import rng_for
from budgetab.sim import (ConfigError, SimConfig, SweepSpec, aggregate,
                          generate_instance, rows_to_csv, run_trials, sweep)
from budgetab.solver import SolverConfig, SolverError

log = logging.getLogger("budgetab")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4


def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None),
                        help="master seed (default: fresh entropy, printed to stderr)")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    parser.add_argument("--tolerance", type=float, default=d(None), help="solver KKT tolerance")
    parser.add_argument("--trials", type=int, default=d(None), help="trials per instance")
    parser.add_argument("--instances", type=int, default=d(None), help="instances per grid point")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    p = argparse.ArgumentParser(prog="budgetab",
                                description="Budget-constrained A/B experiment design.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="generate a synthetic instance")
    g.add_argument("config", help="JSON config (n, r1, r2, r3, seed, ...)")
    g.add_argument("-o", "--output", required=True)

    d = sub.add_parser("design", parents=[common], help="compute an experiment matrix")
    d.add_argument("instance")
    d.add_argument("--kind", default="constrained",
                   choices=("bernoulli", "unconstrained", "constrained"))
    d.add_argument("--p", type=float, default=0.5, help="bernoulli treatment probability")
    d.add_argument("-o", "--output", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Monte-Carlo trials at one grid point")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="CSV path (default stdout)")

    w = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV and SVG")
    w.add_argument("config", nargs="?", help="JSON sweep config")
    w.add_argument("outdir")
    w.add_argument("--preset", choices=("fig3", "fig4", "fig5", "fig6"))
    w.add_argument("--no-svg", action="store_true", help="write the CSV only")

    o = sub.add_parser("online", parents=[common], help="replay an instance as a stream")
    o.add_argument("instance")
    o.add_argument("--config", help="JSON with solver settings and an optional 'order'")
    o.add_argument("-o", "--output", required=True, help="trace CSV path")
    return p


def _read_json(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _seed(args, cfg_seed=None):
    if args.seed is not None:
        return args.seed
    if cfg_seed is not None:
        return cfg_seed
    seed = secrets.randbits(63)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _solver_cfg(args, base=None):
    base = base or SolverConfig()
    if args.tolerance is not None:
        try:
            return replace(base, kkt_tolerance=args.tolerance)
        except ValueError as exc:
            raise ConfigError(f"tolerance: {exc}") from exc
    return base


def _sim_config(args, data):
    data = dict(data)
    data["seed"] = _seed(args, data.get("seed"))
    for k in ("trials", "instances"):
        if getattr(args, k) is not None:
            data[k] = getattr(args, k)
    cfg = SimConfig.from_dict(data)
    return replace(cfg, solver=_solver_cfg(args, cfg.solver))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def cmd_generate(args):
    cfg = _sim_config(args, _read_json(args.config))
    inst = generate_instance(cfg, (cfg.seed, 0))
    problems = validate_instance(inst)
    if problems:
        raise ConfigError("; ".join(problems))
    save_instance(inst, args.output)
    spend = np.maximum((inst.costs * inst.w1).sum(0), (inst.costs * inst.w0).sum(0))
    print(f"m={inst.m} n={inst.n} tte={expected_tte(inst):.6g}")
    print("budget slack: " + " ".join(f"{s:.4g}" for s in inst.budgets - spend))
    return EXIT_OK


def cmd_design(args):
    inst = load_instance(args.instance)
    cfg = _solver_cfg(args)
    out = {"kind": args.kind, "shape": [inst.m, inst.n]}
    if args.kind == "bernoulli":
        out["p"] = args.p
    try:
        if args.kind == "constrained":
            X, cert = constrained_optimal_design(inst, cfg, return_certificate=True)
            out["certificate"] = cert.to_dict() if cert is not None else None
        else:
            X = make_design(inst, args.kind, args.p, cfg)
    except SolverError as exc:
        out["X"] = None if exc.x is None else np.asarray(exc.x).tolist()
        out["certificate"] = exc.certificate.to_dict() if exc.certificate else None
        out["error"] = str(exc)
        _write_json(args.output, out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out["X"] = X.tolist()
    _write_json(args.output, out)
    if "certificate" in out and out["certificate"]:
        c = out["certificate"]
        print(f"objective={c['objective']:.10g} kkt_residual={c['kkt_residual']:.3g}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _sim_config(args, _read_json(args.config))
    stats = []
    for k in range(cfg.instances):
        inst = generate_instance(cfg, (cfg.seed, k))
        stats.append(run_trials(inst, cfg, key=(k,)))
    row = {"r1": cfg.r1, "r2": cfg.r2, "r3": cfg.r3, "design": cfg.design,
           "throttle": cfg.throttle_kind, "estimator": cfg.estimator, "trials": cfg.trials,
           "instances": cfg.instances}
    row.update(aggregate(stats))
    text = rows_to_csv([row])
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args):
    data = _read_json(args.config) if args.config else {}
    if args.preset:
        data["preset"] = args.preset
    if "preset" not in data and "r1" not in data:
        raise ConfigError("sweep needs a config file or --preset")
    data["seed"] = _seed(args, data.get("seed"))
    for k in ("trials", "instances"):
        if getattr(args, k) is not None:
            data[k] = getattr(args, k)
    spec = SweepSpec.from_dict(data)
    spec = replace(spec, base=replace(spec.base, solver=_solver_cfg(args, spec.base.solver)))
    os.makedirs(args.outdir, exist_ok=True)

    def progress(i, total, point):
        print(f"[{i}/{total}] r1={point[0]} r2={point[1]} r3={point[2]}", file=sys.stderr)

    rows = sweep(spec, jobs=args.jobs, progress=progress)
    path = os.path.join(args.outdir, f"{spec.name}.csv")
    with open(path, "w") as fh:
        fh.write(rows_to_csv(rows))
    print(path)
    if not args.no_svg:
        try:
            from budgetab.plots import plot_sweep
        except ImportError:
            log.warning("matplotlib not installed; skipping SVG output")
        else:
            for f in plot_sweep(rows, spec.name, args.outdir):
                print(f)
    return EXIT_OK


def cmd_online(args):
    inst = load_instance(args.instance)
    data = _read_json(args.config) if args.config else {}
    order = data.pop("order", None)
    seed = _seed(args, data.pop("seed", None))
    try:
        cfg = _solver_cfg(args, SolverConfig(**data))
    except TypeError as exc:
        raise ConfigError(f"unknown solver setting: {exc}") from exc
    with open(args.output, "w", newline="") as fh:
        fh.write(",".join(TRACE_FIELDS) + "\n")

        def on_step(rec):
            fh.write(",".join(str(rec[k]) for k in TRACE_FIELDS) + "\n")
            fh.flush()

        try:
            res = online_run(inst, cfg, rng_for(seed, 2), order=order, on_step=on_step)
        except OnlineError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    print(json.dumps({"estimate": res.estimate, "tte": expected_tte(inst), "seed": seed,
                      "solves": res.solves, "rejected": res.rejected}))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "design": cmd_design, "simulate": cmd_simulate,
            "sweep": cmd_sweep, "online": cmd_online}


def main(argv=None):
    logging.basicConfig(level=os.environ.get("BUDGETAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    log.info("backend: %s", kernels.backend())
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
