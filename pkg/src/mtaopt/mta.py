"""Outer solver loops: fixed-parameter and adaptive runs, the KKT residual
measure, per-iteration trace records, and the Lyapunov descent diagnostic.

Each outer iteration freezes Taylor models at the current (always feasible)
iterate, solves the regularized subproblem globally through its dual, and
accepts the recovered point after verifying the model descent condition and
true constraint feasibility. The adaptive mode doubles the regularization
weights until a measured descent test passes, so Lipschitz constants need
not be known.
"""

import json
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .problem import ProblemInstance, max_violation
from .subproblem import (DualTolerances, InfeasibleModel, build_model,
                         model_value, solve_dual)

FEAS_TOL = 1e-9          # accepted iterates must be truly feasible to this
DESC_RETRIES = 3         # gap_tol tightenings before declaring a stall

TRACE_COLUMNS = ("k", "F", "max_violation", "step_norm", "kkt_measure",
                 "mult_norm", "dual_iters", "doublings", "wall_ms")


@dataclass
class MtaConfig:
    """Run parameters; reads/writes JSON with these exact field names.

    Fixed mode needs reg_obj (> the order-p Lipschitz bound) and reg_con
    (> the order-q bounds per constraint). Adaptive mode instead needs the
    floors reg_obj0/reg_con0 and a descent_margin > 0. reg_step is the extra
    order-(q+1) weight on the objective model in both modes.
    """

    p: int = 2
    q: int = 2
    mode: str = "fixed"
    reg_obj: Optional[float] = None
    reg_step: float = 1.0
    reg_con: Optional[object] = None      # scalar or per-constraint list
    reg_obj0: Optional[float] = None
    reg_con0: Optional[object] = None
    descent_margin: float = 1.0
    eta1: float = 1e-6
    eta2: float = 1e-6
    eta3: float = 1e-6
    gap_tol: float = 1e-10
    dual_max_iters: int = 5000
    f_gap_tol: float = 1e-3
    violation_tol: float = 1e-3
    max_outer_iters: int = 500
    step_norm_tol: float = 1e-10
    kkt_tol: float = 1e-4
    f_drop_limit: float = 1e6
    store_iterates: bool = False
    warm_start_u: bool = False

    def dual_tolerances(self, gap_tol=None) -> DualTolerances:
        return DualTolerances(eta1=self.eta1, eta2=self.eta2, eta3=self.eta3,
                              gap_tol=self.gap_tol if gap_tol is None else gap_tol,
                              max_iters=self.dual_max_iters)


def config_to_dict(cfg: MtaConfig) -> dict:
    doc = asdict(cfg)
    for key in ("reg_con", "reg_con0"):
        if isinstance(doc[key], np.ndarray):
            doc[key] = [float(v) for v in doc[key]]
    return doc


def config_from_dict(doc: dict) -> MtaConfig:
    known = {f for f in MtaConfig.__dataclass_fields__}
    extra = set(doc) - known
    if extra:
        raise ValueError(f"unknown config fields: {sorted(extra)}")
    return MtaConfig(**doc)


def load_config(path) -> MtaConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def lipschitz_bounds(inst: ProblemInstance, p: int, q: int):
    """Order-p objective and order-q constraint Lipschitz bounds of inst."""
    lp = inst.lip_hess[0] if p == 2 else inst.lip_grad[0]
    lq = inst.lip_hess[1:] if q == 2 else inst.lip_grad[1:]
    return float(lp), np.asarray(lq, dtype=np.float64)


def default_config(inst: ProblemInstance, p: int, q: int, mode: str = "fixed",
                   margin: float = 1.2, **overrides) -> MtaConfig:
    """Config with regularization weights set from the instance's declared
    Lipschitz bounds (margin * bound, floored above bound + eta3)."""
    lp, lq = lipschitz_bounds(inst, p, q)
    cfg = MtaConfig(p=p, q=q, mode=mode)
    if mode == "fixed":
        cfg.reg_obj = max(margin * lp, lp + 10 * cfg.eta3)
        cfg.reg_con = np.maximum(margin * lq, lq + 10 * cfg.eta3)
    elif mode == "adaptive":
        cfg.reg_obj0 = lp / 64.0
        cfg.reg_con0 = lq / 64.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for key, val in overrides.items():
        if key not in MtaConfig.__dataclass_fields__:
            raise ValueError(f"unknown config field {key!r}")
        setattr(cfg, key, val)
    return cfg


@dataclass
class TraceRow:
    k: int
    F: float
    max_violation: float
    step_norm: float
    kkt_measure: float
    mult_norm: float
    dual_iters: int
    doublings: int
    wall_ms: float


@dataclass
class MtaTrace:
    """Per-iteration records of one run; row k describes iterate x_k."""

    rows: list = field(default_factory=list)
    status: str = "max_iters"
    total_time: float = 0.0
    xs: Optional[list] = None
    us: Optional[list] = None
    final_x: Optional[np.ndarray] = None
    final_u: Optional[np.ndarray] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=np.float64)

    @property
    def iterations(self) -> int:
        return self.rows[-1].k if self.rows else 0


def write_trace(trace: MtaTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace.rows:
            fh.write(f"{row.k},{format(row.F, '.17g')},{format(row.max_violation, '.17g')},"
                     f"{format(row.step_norm, '.17g')},{format(row.kkt_measure, '.17g')},"
                     f"{format(row.mult_norm, '.17g')},{row.dual_iters},{row.doublings},"
                     f"{format(row.wall_ms, '.17g')}\n")


def read_trace(path) -> dict:
    """Trace CSV back as a dict of column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns {header}")
        data = [[] for _ in TRACE_COLUMNS]
        for line in fh:
            for slot, txt in zip(data, line.strip().split(",")):
                slot.append(float(txt))
    return {name: np.asarray(col) for name, col in zip(TRACE_COLUMNS, data)}


def kkt_measure(inst: ProblemInstance, x, u, q: int) -> float:
    """KKT residual: max of the Lagrangian gradient norm and the per-constraint
    complementarity violations (-u_i F_i)_+ raised to q/(q+1).

    Uses true constraint values, not model values; the composite term is
    absent here so no subgradient enters the stationarity residual.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (inst.m,):
        raise ValueError(f"multipliers have shape {u.shape}, expected ({inst.m},)")
    if np.any(u < 0):
        raise ValueError("multipliers must be nonnegative")
    grads = inst.gradients(x)
    total = grads[0] + (u @ grads[1:] if inst.m else 0.0)
    stat = float(np.linalg.norm(total))
    comp = 0.0
    if inst.m:
        fvals = inst.values(x)[1:]
        comp = float(np.max(np.maximum(0.0, -u * fvals) ** (q / (q + 1.0))))
    return max(stat, comp)


@dataclass
class StepDiag:
    accepted: bool
    dual_iters: int
    gap: float
    dual_status: str
    model_objective: float
    alpha: float


def mta_step(inst: ProblemInstance, x_k, cfg: MtaConfig, reg_obj: float,
             reg_con, f_k: Optional[float] = None, warm_u=None,
             alpha0: float = 1.0):
    """One outer step: build the model at x_k, solve its dual, and verify the
    model descent condition and true feasibility of the recovered point.

    A violated check tightens gap_tol tenfold and re-solves (up to
    DESC_RETRIES); if the checks still fail the iterate stays put and the
    step reports accepted=False. Returns (x_next, u, w, StepDiag).
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    model = build_model(inst, x_k, cfg.p, cfg.q, reg_obj, cfg.reg_step, reg_con)
    if f_k is None:
        f_k = float(model.vals[0])
    gap_tol = cfg.gap_tol
    iters_total = 0
    sol = None
    for _ in range(1 + DESC_RETRIES):
        sol = solve_dual(model, cfg.dual_tolerances(gap_tol), warm_u=warm_u,
                         alpha0=alpha0)
        iters_total += sol.dual_iters
        model_obj = model_value(model, 0, sol.x_next)
        descent_ok = model_obj <= f_k + 1e-12 * (1.0 + abs(f_k))
        feasible_ok = max_violation(inst, sol.x_next) <= FEAS_TOL
        if descent_ok and feasible_ok:
            return sol.x_next, sol.u, sol.w, StepDiag(
                accepted=True, dual_iters=iters_total, gap=sol.gap,
                dual_status=sol.status, model_objective=model_obj,
                alpha=sol.alpha)
        gap_tol /= 10.0
    return x_k.copy(), sol.u, sol.w, StepDiag(
        accepted=False, dual_iters=iters_total, gap=sol.gap,
        dual_status="degenerate", model_objective=f_k, alpha=sol.alpha)


def _validate_fixed(inst: ProblemInstance, cfg: MtaConfig):
    if cfg.mode != "fixed":
        raise ValueError("run_fixed needs a fixed-mode config")
    if cfg.reg_obj is None or cfg.reg_con is None:
        raise ValueError("fixed mode needs reg_obj and reg_con")
    lp, lq = lipschitz_bounds(inst, cfg.p, cfg.q)
    reg_con = np.broadcast_to(np.asarray(cfg.reg_con, dtype=np.float64),
                              (inst.m,)).copy()
    if not cfg.reg_obj > lp:
        raise ValueError(f"reg_obj {cfg.reg_obj} must exceed the order-{cfg.p} "
                         f"Lipschitz bound {lp}")
    if np.any(reg_con <= lq):
        raise ValueError("every reg_con entry must exceed its constraint's "
                         "Lipschitz bound")
    if cfg.reg_step <= 0:
        raise ValueError("reg_step must be positive")
    return float(cfg.reg_obj), reg_con


def _check_start(inst: ProblemInstance):
    viol = max_violation(inst, inst.x0)
    if viol > FEAS_TOL:
        raise ValueError(f"x0 is infeasible (violation {viol:.3e}); "
                         "a feasible starting point is required")


def _finalize(trace: MtaTrace, violation_guard: float):
    fcol = trace.column("F")
    if np.any(np.diff(fcol) > 1e-10 * (1.0 + np.abs(fcol[:-1]))):
        raise AssertionError("objective column increased along the run")
    if np.any(trace.column("max_violation") > violation_guard + 1e-12):
        raise AssertionError("an iterate violated the feasibility guard")
    return trace


def run_fixed(inst: ProblemInstance, cfg: MtaConfig,
              reference_fstar: Optional[float] = None) -> MtaTrace:
    """Fixed-parameter outer loop.

    Stops on the reference gap (F(x_k) - F* <= f_gap_tol and violation <=
    violation_tol) when reference_fstar is given, otherwise on the KKT
    measure or the step norm. A step that cannot make model descent with a
    truly feasible point stalls the run.
    """
    reg_obj, reg_con = _validate_fixed(inst, cfg)
    _check_start(inst)
    t_start = time.perf_counter()
    trace = MtaTrace(xs=[] if cfg.store_iterates else None,
                     us=[] if cfg.store_iterates else None)
    x = inst.x0.copy()
    u = np.zeros(inst.m)
    step_norm = 0.0
    diag = None
    alpha = 1.0
    trace.status = "max_iters"
    for k in range(cfg.max_outer_iters + 1):
        t0 = time.perf_counter()
        fvals = inst.values(x)
        f_k = float(fvals[0])
        viol = float(max(0.0, np.max(fvals[1:]))) if inst.m else 0.0
        kkt = kkt_measure(inst, x, u, cfg.q)
        row_time = 0.0 if diag is None else (time.perf_counter() - t_step_start) * 1e3
        trace.rows.append(TraceRow(
            k=k, F=f_k, max_violation=viol, step_norm=step_norm,
            kkt_measure=kkt, mult_norm=float(np.linalg.norm(u)),
            dual_iters=0 if diag is None else diag.dual_iters, doublings=0,
            wall_ms=row_time))
        if cfg.store_iterates:
            trace.xs.append(x.copy())
            trace.us.append(u.copy())
        if reference_fstar is not None:
            if f_k - reference_fstar <= cfg.f_gap_tol and viol <= cfg.violation_tol:
                trace.status = "converged"
                break
        elif k >= 1 and (kkt <= cfg.kkt_tol or step_norm <= cfg.step_norm_tol):
            trace.status = "converged"
            break
        if f_k <= trace.rows[0].F - cfg.f_drop_limit or not np.isfinite(f_k):
            # unbounded descent ray: the instance violates the bounded
            # level-set assumption, stop before the numbers overflow
            trace.status = "diverged"
            break
        if diag is not None and not diag.accepted:
            trace.status = "stalled"
            break
        if k == cfg.max_outer_iters:
            trace.status = "max_iters"
            break
        t_step_start = time.perf_counter()
        x_next, u, w, diag = mta_step(
            inst, x, cfg, reg_obj, reg_con, f_k=f_k,
            warm_u=(u if cfg.warm_start_u and k >= 1 else None), alpha0=alpha)
        alpha = min(max(diag.alpha, 1e-6), 1e6)
        step_norm = float(np.linalg.norm(x_next - x))
        x = x_next
    trace.final_x = x
    trace.final_u = u.copy()
    trace.total_time = time.perf_counter() - t_start
    return _finalize(trace, FEAS_TOL)


def adaptive_doubling_cap(inst: ProblemInstance, cfg: MtaConfig) -> int:
    """Worst-case inner doublings before the adaptive acceptance test must
    pass, from the declared Lipschitz bounds."""
    lp, lq = lipschitz_bounds(inst, cfg.p, cfg.q)
    cap = int(np.ceil(np.log2(max((cfg.descent_margin + lp) / cfg.reg_obj0, 1.0))))
    if inst.m:
        reg_con0 = np.broadcast_to(np.asarray(cfg.reg_con0, dtype=np.float64),
                                   (inst.m,))
        cap += int(np.ceil(np.max(np.log2(np.maximum(
            (cfg.eta3 + lq) / reg_con0, 1.0)))))
    return cap + 2


def run_adaptive(inst: ProblemInstance, cfg: MtaConfig) -> MtaTrace:
    """Adaptive outer loop: no Lipschitz knowledge.

    Each outer iteration retries the subproblem with weights scaled by 2^j
    until the measured descent test passes and the new point is feasible;
    accepted weights relax by one doubling level (floored at reg_obj0 and
    reg_con0) for the next iteration.
    """
    if cfg.mode != "adaptive":
        raise ValueError("run_adaptive needs an adaptive-mode config")
    if cfg.reg_obj0 is None or cfg.reg_con0 is None or cfg.reg_obj0 <= 0:
        raise ValueError("adaptive mode needs positive reg_obj0 and reg_con0")
    if cfg.descent_margin <= 0 or cfg.reg_step <= 0:
        raise ValueError("descent_margin and reg_step must be positive")
    _check_start(inst)
    reg_con0 = np.broadcast_to(np.asarray(cfg.reg_con0, dtype=np.float64),
                               (inst.m,)).copy()
    if np.any(reg_con0 <= 0):
        raise ValueError("reg_con0 entries must be positive")
    t_start = time.perf_counter()
    trace = MtaTrace(xs=[] if cfg.store_iterates else None,
                     us=[] if cfg.store_iterates else None)
    x = inst.x0.copy()
    u = np.zeros(inst.m)
    step_norm = 0.0
    reg_obj_k = float(cfg.reg_obj0)
    reg_con_k = reg_con0.copy()
    jcap = adaptive_doubling_cap(inst, cfg) + 3
    fact_p = float(math.factorial(cfg.p + 1))
    fact_q = float(math.factorial(cfg.q + 1))
    doublings = 0
    dual_iters = 0
    alpha = 1.0
    accepted = True
    trace.status = "max_iters"
    for k in range(cfg.max_outer_iters + 1):
        fvals = inst.values(x)
        f_k = float(fvals[0])
        viol = float(max(0.0, np.max(fvals[1:]))) if inst.m else 0.0
        kkt = kkt_measure(inst, x, u, cfg.q)
        row_time = 0.0 if k == 0 else (time.perf_counter() - t_iter_start) * 1e3
        trace.rows.append(TraceRow(
            k=k, F=f_k, max_violation=viol, step_norm=step_norm,
            kkt_measure=kkt, mult_norm=float(np.linalg.norm(u)),
            dual_iters=dual_iters, doublings=doublings, wall_ms=row_time))
        if cfg.store_iterates:
            trace.xs.append(x.copy())
            trace.us.append(u.copy())
        if k >= 1 and (kkt <= cfg.kkt_tol or step_norm <= cfg.step_norm_tol):
            trace.status = "converged"
            break
        if f_k <= trace.rows[0].F - cfg.f_drop_limit or not np.isfinite(f_k):
            trace.status = "diverged"
            break
        if not accepted:
            trace.status = "stalled"
            break
        if k == cfg.max_outer_iters:
            trace.status = "max_iters"
            break
        t_iter_start = time.perf_counter()
        accepted = False
        dual_iters = 0
        for j in range(jcap + 1):
            scale = 2.0 ** j
            doublings = j
            try:
                x_next, u_next, w, diag = mta_step(
                    inst, x, cfg, scale * reg_obj_k, scale * reg_con_k,
                    f_k=f_k, alpha0=alpha)
            except InfeasibleModel:
                dual_iters += cfg.dual_max_iters
                continue
            dual_iters += diag.dual_iters
            alpha = min(max(diag.alpha, 1e-6), 1e6)
            if not diag.accepted:
                continue
            r = float(np.linalg.norm(x_next - x))
            f_next = float(inst.values(x_next)[0])
            need = (cfg.descent_margin / fact_p * r ** (cfg.p + 1)
                    + cfg.reg_step / fact_q * r ** (cfg.q + 1))
            feasible = max_violation(inst, x_next) <= FEAS_TOL
            if need <= f_k - f_next + 1e-12 * (1.0 + abs(f_k)) and feasible:
                accepted = True
                reg_obj_k = max(2.0 ** (j - 1) * reg_obj_k, cfg.reg_obj0)
                reg_con_k = np.maximum(2.0 ** (j - 1) * reg_con_k, reg_con0)
                step_norm = r
                x = x_next
                u = u_next
                break
        if not accepted:
            step_norm = 0.0
    trace.final_x = x
    trace.final_u = u.copy()
    trace.total_time = time.perf_counter() - t_start
    return _finalize(trace, FEAS_TOL)


@dataclass
class LyapunovDiag:
    """Lagrangian-plus-displacement diagnostic along a stored run.

    theta1/theta2 weight the displacement powers; reg_step_required is the
    reg_step value the descent lemma would demand for the observed multiplier
    bound. Failure of strict descent is reported, not fatal, when the run's
    reg_step was below that requirement.
    """

    theta1: float
    theta2: float
    reg_step_required: float
    mult_bound: float
    ks: np.ndarray
    xi: np.ndarray
    fail_ks: list


def lyapunov_required_reg_step(inst: ProblemInstance, cfg: MtaConfig,
                               mult_bound: float) -> float:
    """reg_step prescription making the Lyapunov value strictly decrease."""
    _, lq = lipschitz_bounds(inst, cfg.p, cfg.q)
    reg_con = np.broadcast_to(np.asarray(cfg.reg_con, dtype=np.float64), (inst.m,))
    norm_sum = float(np.linalg.norm(reg_con + lq))
    return 3.0 * mult_bound * norm_sum + 2.0 * inst.m * cfg.eta2


def lyapunov_diag(trace: MtaTrace, inst: ProblemInstance,
                  cfg: MtaConfig) -> LyapunovDiag:
    """Evaluate the Lyapunov sequence xi_k along a run with stored iterates.

    xi_k = F(x_k) + sum_i u^k_i F_i(x_k)
           + theta1/(p+1)! ||x_k - x_{k-1}||^(p+1)
           + theta2/(q+1)! ||x_k - x_{k-1}||^(q+1)

    defined for k >= 1; fail_ks lists the k where xi_k failed to decrease
    strictly from xi_{k-1}.
    """
    if trace.xs is None or trace.us is None:
        raise ValueError("trace lacks stored iterates; run with store_iterates")
    lp, lq = lipschitz_bounds(inst, cfg.p, cfg.q)
    reg_con = np.broadcast_to(np.asarray(cfg.reg_con, dtype=np.float64), (inst.m,))
    mult_bound = max(float(np.linalg.norm(us)) for us in trace.us)
    theta1 = (float(cfg.reg_obj) - lp) / 2.0
    theta2 = (2.0 * mult_bound * float(np.linalg.norm(reg_con + lq))
              + inst.m * cfg.eta2)
    fact_p = float(math.factorial(cfg.p + 1))
    fact_q = float(math.factorial(cfg.q + 1))
    ks = []
    xi = []
    for k in range(1, len(trace.xs)):
        x = trace.xs[k]
        u = trace.us[k]
        vals = inst.values(x)
        lag = float(vals[0]) + (float(u @ vals[1:]) if inst.m else 0.0)
        disp = float(np.linalg.norm(x - trace.xs[k - 1]))
        ks.append(k)
        xi.append(lag + theta1 / fact_p * disp ** (cfg.p + 1)
                  + theta2 / fact_q * disp ** (cfg.q + 1))
    xi = np.asarray(xi)
    fail_ks = [ks[j] for j in range(1, len(xi)) if not xi[j] < xi[j - 1]]
    return LyapunovDiag(theta1=theta1, theta2=theta2,
                        reg_step_required=lyapunov_required_reg_step(
                            inst, cfg, mult_bound),
                        mult_bound=mult_bound,
                        ks=np.asarray(ks, dtype=np.int64), xi=xi,
                        fail_ks=fail_ks)
