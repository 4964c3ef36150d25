"""Command-line front end: generate instances, solve single problems, run
experiment plans, fit rates, and emit the Lyapunov diagnostic.

Exit codes: 0 success/converged, 2 bad usage or missing files, 3 run did not
converge, 4 infeasible subproblem model, 5 infeasible starting point.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bench, mta
from .problem import (InfeasibleStart, dumps_json, generate_benchmark,
                      generate_convex_benchmark, load_instance, save_instance)
from .subproblem import InfeasibleModel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE_MODEL = 4
EXIT_INFEASIBLE_START = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mta",
        description="Feasible Taylor-model solver and benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a random instance JSON")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--family", default="nonconvex",
                     choices=["nonconvex", "convex", "strongly-convex"])
    gen.add_argument("--sigma", type=float, default=1.0,
                     help="strong convexity constant (strongly-convex family)")
    gen.add_argument("--out", required=True)

    sol = sub.add_parser("solve", help="run the solver on an instance JSON")
    sol.add_argument("--instance", required=True)
    sol.add_argument("--p", type=int, default=2, choices=[1, 2])
    sol.add_argument("--q", type=int, default=2, choices=[1, 2])
    sol.add_argument("--adaptive", action="store_true")
    sol.add_argument("--config", help="JSON file overriding run parameters")
    sol.add_argument("--trace-out", help="write the per-iteration trace CSV here")
    sol.add_argument("--fstar", type=float, help="reference value for stopping")

    ben = sub.add_parser("bench", help="run an experiment plan")
    ben.add_argument("--plan", required=True,
                     help="plan JSON path, or 'default' for the shipped desk plan")
    ben.add_argument("--out-dir", required=True)
    ben.add_argument("--threads", type=int)

    rat = sub.add_parser("rates", help="fit a convergence rate on a trace CSV")
    rat.add_argument("--trace", required=True)
    rat.add_argument("--metric", required=True, choices=["KktMin", "FGap"])
    rat.add_argument("--fstar", type=float)
    rat.add_argument("--window", type=int, nargs=2, default=(10, 200),
                     metavar=("KMIN", "KMAX"))
    rat.add_argument("--p", type=int, default=2)
    rat.add_argument("--q", type=int, default=2)

    dia = sub.add_parser("diag", help="Lyapunov descent diagnostic for a run")
    dia.add_argument("--instance", required=True)
    dia.add_argument("--p", type=int, default=2, choices=[1, 2])
    dia.add_argument("--q", type=int, default=2, choices=[1, 2])
    dia.add_argument("--config", help="JSON file overriding run parameters")
    dia.add_argument("--out", help="write the diagnostic JSON here")
    return parser


def _cmd_generate(args) -> int:
    try:
        if args.family == "nonconvex":
            inst = generate_benchmark(args.n, args.m, args.seed)
        else:
            sigma = args.sigma if args.family == "strongly-convex" else 0.0
            inst = generate_convex_benchmark(args.n, args.m, args.seed, sigma=sigma)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    save_instance(inst, args.out)
    print(f"wrote {args.out} (n={inst.n}, m={inst.m}, family={inst.family})")
    return EXIT_OK


def _load_config(inst, args) -> mta.MtaConfig:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    mode = "adaptive" if getattr(args, "adaptive", False) else "fixed"
    mode = overrides.pop("mode", mode)
    return mta.default_config(inst, args.p, args.q, mode=mode, **overrides)


def _cmd_solve(args) -> int:
    if not os.path.exists(args.instance):
        print(f"error: no such file {args.instance}", file=sys.stderr)
        return EXIT_USAGE
    try:
        inst = load_instance(args.instance)
    except InfeasibleStart as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_START
    cfg = _load_config(inst, args)
    try:
        if cfg.mode == "adaptive":
            trace = mta.run_adaptive(inst, cfg)
        else:
            trace = mta.run_fixed(inst, cfg, reference_fstar=args.fstar)
    except InfeasibleModel as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_MODEL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_START if "infeasible" in str(exc) else EXIT_USAGE
    if args.trace_out:
        mta.write_trace(trace, args.trace_out)
    last = trace.rows[-1]
    print(f"status={trace.status} F={last.F:.6f} violation={last.max_violation:.6f} "
          f"kkt_measure={last.kkt_measure:.6f} iters={last.k}")
    return EXIT_OK if trace.status == "converged" else EXIT_NOT_CONVERGED


def _cmd_bench(args) -> int:
    if args.plan == "default":
        plan = bench.default_plan()
    elif os.path.exists(args.plan):
        try:
            plan = bench.load_plan(args.plan)
        except (ValueError, KeyError) as exc:
            print(f"error: bad plan file: {exc}", file=sys.stderr)
            return EXIT_USAGE
    else:
        print(f"error: no such file {args.plan}", file=sys.stderr)
        return EXIT_USAGE
    results, summary, gates = bench.run_plan(plan, out_dir=args.out_dir,
                                             threads=args.threads)
    for row in summary:
        print(f"n={row['n']} m={row['m']} {row['method']}: "
              f"median_iters={row['median_iters']:g} "
              f"success_rate={row['success_rate']:.2f}")
    ok = all(g["ok"] for g in gates.values()) if gates else True
    for cell, g in gates.items():
        print(f"gate {cell}: medians {g['median_22']:g}/{g['median_21']:g}/"
              f"{g['median_11']:g} pairwise {g['pair_22_lt_21']}+"
              f"{g['pair_21_lt_11']}/{g['seeds']} -> {'ok' if g['ok'] else 'FAIL'}")
    return EXIT_OK if ok else 1


def _cmd_rates(args) -> int:
    if args.metric == "FGap" and args.fstar is None:
        print("error: --metric FGap requires --fstar", file=sys.stderr)
        return EXIT_USAGE
    if not os.path.exists(args.trace):
        print(f"error: no such file {args.trace}", file=sys.stderr)
        return EXIT_USAGE
    cols = mta.read_trace(args.trace)
    trace = mta.MtaTrace(rows=[mta.TraceRow(
        k=int(cols["k"][j]), F=cols["F"][j],
        max_violation=cols["max_violation"][j], step_norm=cols["step_norm"][j],
        kkt_measure=cols["kkt_measure"][j], mult_norm=cols["mult_norm"][j],
        dual_iters=int(cols["dual_iters"][j]),
        doublings=int(cols["doublings"][j]), wall_ms=cols["wall_ms"][j])
        for j in range(len(cols["k"]))])
    cfg = mta.MtaConfig(p=args.p, q=args.q)
    try:
        report = bench.fit_rate(trace, args.metric, window=tuple(args.window),
                                cfg=cfg, fstar=args.fstar)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"metric={report.metric} fitted_slope={report.fitted_slope:.6f} "
          f"theory_slope={report.theory_slope:.6f} points={report.points} "
          f"saturated={report.saturated}")
    return EXIT_OK


def _cmd_diag(args) -> int:
    if not os.path.exists(args.instance):
        print(f"error: no such file {args.instance}", file=sys.stderr)
        return EXIT_USAGE
    try:
        inst = load_instance(args.instance)
    except InfeasibleStart as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_START
    cfg = _load_config(inst, args)
    cfg.store_iterates = True
    trace = mta.run_fixed(inst, cfg)
    diag = mta.lyapunov_diag(trace, inst, cfg)
    doc = {
        "status": trace.status,
        "iterations": trace.iterations,
        "theta1": diag.theta1,
        "theta2": diag.theta2,
        "reg_step_required": diag.reg_step_required,
        "mult_bound": diag.mult_bound,
        "descent_failures": [int(k) for k in diag.fail_ks],
        "xi": [float(v) for v in diag.xi],
    }
    text = dumps_json(doc)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
            fh.write("\n")
    print(f"lyapunov: iters={trace.iterations} failures={len(diag.fail_ks)} "
          f"theta1={diag.theta1:.6f} theta2={diag.theta2:.6f} "
          f"reg_step_required={diag.reg_step_required:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "solve": _cmd_solve,
        "bench": _cmd_bench,
        "rates": _cmd_rates,
        "diag": _cmd_diag,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
