"""Select the seeds baked into the shipped desk plan.

The random instance family produces a large fraction of draws whose feasible
set contains an unbounded descent ray; such instances have no reference
solution to race toward and invert iteration-count comparisons. The shipped
plan therefore uses, per cell, the first seeds (scanning seed = 1, 2, 3...)
that pass a well-posedness predicate defined without looking at any ordering:

  1. the committee settles: the order-(2,1) member reaches a bona fide KKT
     point (converged with a small final KKT residual) under the committee
     configuration, and
  2. every plan method's race against the committee reference converges.

Usage: python benchmarks/select_plan_seeds.py [count_per_cell]
"""

import math
import sys
import time

from mtaopt.bench import ExperimentPlan, CellSpec, MethodSpec, committee_reference, _run_one
from mtaopt.mta import default_config, run_fixed
from mtaopt.problem import generate_benchmark

CELLS = ((10, 10), (10, 20), (20, 10))
SCAN_LIMIT = 1000


def settles(inst, plan) -> bool:
    cfg = default_config(inst, 2, 1, max_outer_iters=10 * plan.max_outer_iters,
                         kkt_tol=1e-5, step_norm_tol=1e-12)
    try:
        trace = run_fixed(inst, cfg)
    except Exception:
        return False
    return (trace.status == "converged"
            and trace.rows[-1].kkt_measure <= 1e-3)


def main():
    want = int(sys.argv[1]) if len(sys.argv) > 1 else 10
    methods = [MethodSpec("MTA(2,2)", 2, 2), MethodSpec("MTA(2,1)", 2, 1),
               MethodSpec("MTA(1,1)", 1, 1)]
    for (n, m) in CELLS:
        plan = ExperimentPlan(cells=[CellSpec(n, m, [1])], methods=methods,
                              max_outer_iters=1500)
        chosen = []
        t0 = time.time()
        for seed in range(1, SCAN_LIMIT + 1):
            if len(chosen) >= want:
                break
            inst = generate_benchmark(n, m, seed, check_oracles=False)
            if not settles(inst, plan):
                continue
            fstar = committee_reference(inst, plan)
            if not math.isfinite(fstar):
                continue
            runs = [_run_one(inst, plan, spec, fstar, None, n, m, seed)
                    for spec in methods]
            if all(r.success for r in runs):
                chosen.append(seed)
                iters = "/".join(str(r.iterations) for r in runs)
                print(f"  cell ({n},{m}) seed {seed}: iters 22/21/11 = {iters}",
                      flush=True)
        print(f"cell ({n},{m}): seeds {chosen}  [{time.time()-t0:.0f}s]",
              flush=True)


if __name__ == "__main__":
    main()
