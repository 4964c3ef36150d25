"""Time the hot kernels under the numba and pure-numpy backends.

The backend is frozen at import, so `--compare` re-executes this script in a
subprocess per backend (MTA_BACKEND=numba / MTA_BACKEND=numpy) and prints
both columns. Direct runs time whichever backend the current environment
selects.

Usage:
    python benchmarks/bench_kernels.py [--compare] [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

CASES = [
    ("chol n=20", "chol", 20, 0),
    ("chol n=50", "chol", 50, 0),
    ("assemble n=20 m=10", "assemble", 20, 10),
    ("dual solve n=10 m=10", "dual", 10, 10),
    ("dual solve n=20 m=20", "dual", 20, 20),
]


def _setup_dual(n, m, seed=1):
    from mtaopt.problem import generate_benchmark
    from mtaopt.subproblem import build_model
    inst = generate_benchmark(n, m, seed=seed, check_oracles=False)
    return build_model(inst, inst.x0, 2, 2, 1.2 * inst.lip_hess[0], 1.0,
                       1.2 * inst.lip_hess[1:])


def run_case(kind, n, m, repeat):
    from mtaopt import _kernels
    rng = np.random.default_rng(0)
    if kind == "chol":
        b = rng.standard_normal((n, n))
        a = b @ b.T + np.eye(n)
        a = 0.5 * (a + a.T)
        _kernels.chol_factor(a)  # warm any compilation
        t0 = time.perf_counter()
        for _ in range(repeat):
            lower, ok = _kernels.chol_factor(a)
        return (time.perf_counter() - t0) / repeat
    if kind == "assemble":
        model = _setup_dual(n, m)
        td = model.td
        u = np.abs(rng.standard_normal(m + 1))
        u[0] = 1.0
        _kernels.assemble_system(u, 8.0, td.grads, td.hess, td.hess_pos, model.rho)
        t0 = time.perf_counter()
        for _ in range(repeat):
            _kernels.assemble_system(u, 8.0, td.grads, td.hess, td.hess_pos,
                                     model.rho)
        return (time.perf_counter() - t0) / repeat
    if kind == "dual":
        from mtaopt.subproblem import solve_dual
        model = _setup_dual(n, m)
        solve_dual(model)  # warm
        reps = max(repeat // 200, 3)
        t0 = time.perf_counter()
        for _ in range(reps):
            solve_dual(model)
        return (time.perf_counter() - t0) / reps
    raise ValueError(kind)


def run_all(repeat):
    from mtaopt import _kernels
    print(f"backend: {_kernels.BACKEND}")
    for label, kind, n, m in CASES:
        per = run_case(kind, n, m, repeat)
        print(f"  {label:24s} {per * 1e6:12.2f} us")


def compare(repeat):
    rows = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, MTA_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--repeat", str(repeat)],
            env=env, capture_output=True, text=True, check=True).stdout
        for line in out.splitlines():
            if line.startswith("  "):
                label, value = line.rsplit(None, 2)[0].strip(), line.split()[-2]
                rows.setdefault(label, {})[backend] = float(value)
    print(f"{'kernel':26s} {'numba us':>12s} {'numpy us':>12s} {'speedup':>9s}")
    for label, vals in rows.items():
        speed = vals["numpy"] / vals["numba"]
        print(f"{label:26s} {vals['numba']:12.2f} {vals['numpy']:12.2f} "
              f"{speed:8.1f}x")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--compare", action="store_true",
                        help="run both backends in subprocesses")
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    if args.compare:
        compare(args.repeat)
    else:
        run_all(args.repeat)


if __name__ == "__main__":
    main()
