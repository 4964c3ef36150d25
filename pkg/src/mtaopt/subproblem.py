"""Regularized Taylor subproblem and its global solution through the dual.

At a point x_k the outer loop freezes Taylor data of order p (objective) and
q (constraints) and adds norm-power regularizers, giving per-index models

    model_i(y) = T_i(y) + rho_i/2 ||y - x_k||^2 + cub_i/6 ||y - x_k||^3

The subproblem min model_0 s.t. model_i <= 0 is generally nonconvex, but its
Lagrange dual in the multipliers u (u_0 = 1 fixed) and a scalar w rewriting
the cubic term is a concave maximization over the convex domain

    D = { (u, w) >= 0 : sum_i u_i H_i + (sum_i u_i rho_i + w/2) I  is PD }

with value

    dual_value(u, w) = sum_i u_i f_i - <H(u,w)^{-1} g(u), g(u)>/2
                       - w^3 / (12 Mt(u)^2),        Mt(u) = sum_i u_i cub_i

and exact closed-form gap to the recovered point x(u,w) = x_k - H^{-1} g:

    gap = Mt/12 * (w/Mt + 2 r) * (r - w/Mt)^2,      r = ||x(u,w) - x_k||

The gap vanishes at w = Mt * r, so projected gradient ascent over D solves
the subproblem globally and certifies it. For p = q = 1 there is no w and
no cubic term; the gap is identically zero.
"""

import math

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .linalg import CholFactor, NotPositiveDefinite, cholesky
from .problem import ProblemInstance, TaylorData, taylor_data

SUPPORTED_ORDERS = ((1, 1), (2, 1), (2, 2))

_STATUS_NAMES = {
    _kernels.STATUS_CONVERGED: "converged",
    _kernels.STATUS_MAX_ITERS: "max_iters",
    _kernels.STATUS_DEGENERATE: "degenerate",
}


class InfeasibleModel(Exception):
    """The dual solver found no point satisfying the model constraints.

    Signals constraint regularization weights too small for the local
    curvature; the adaptive outer loop reacts by doubling them.
    """


@dataclass
class DualTolerances:
    """Termination tolerances of the dual ascent.

    eta1/eta2/eta3 scale the stationarity, complementarity, and feasibility
    thresholds by powers of the candidate step norm; gap_tol bounds the
    relative primal-dual gap.
    """

    eta1: float = 1e-6
    eta2: float = 1e-6
    eta3: float = 1e-6
    gap_tol: float = 1e-10
    max_iters: int = 5000


@dataclass
class SubproblemModel:
    """Taylor data plus regularization coefficients, ready for the dual solver."""

    td: TaylorData
    p: int
    q: int
    rho: np.ndarray  # quadratic weights, per index 0..m
    cub: np.ndarray  # cubic weights, per index 0..m

    def __post_init__(self):
        if (self.p, self.q) not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported orders (p, q) = ({self.p}, {self.q})")
        if np.any(self.rho < 0) or np.any(self.cub < 0):
            raise ValueError("regularization weights must be nonnegative")
        if self.p == 2 and self.cub[0] <= 0:
            raise ValueError("order-2 objective needs a positive cubic weight")

    @property
    def m(self) -> int:
        return self.vals.shape[0] - 1

    @property
    def n(self) -> int:
        return self.td.grads.shape[1]

    @property
    def has_w(self) -> bool:
        return self.p == 2

    @property
    def vals(self) -> np.ndarray:
        return self.td.vals


@dataclass
class DualState:
    """A point of D with its factorization and recovered primal displacement."""

    u: np.ndarray          # full multiplier vector, u[0] = 1
    w: Optional[float]     # None when p = q = 1
    chol: CholFactor
    d: np.ndarray          # x(u, w) - x_k
    r: float


@dataclass
class SubproblemSolution:
    x_next: np.ndarray
    u: np.ndarray          # constraint multipliers u_1..u_m
    w: Optional[float]
    gap: float
    primal_value: float
    model_constraint_values: np.ndarray
    dual_iters: int
    status: str
    beta: float
    alpha: float = 1.0
    beta_path: Optional[np.ndarray] = field(default=None, repr=False)


def build_model(inst: ProblemInstance, x_k, p: int, q: int,
                reg_obj: float, reg_step: float, reg_con) -> SubproblemModel:
    """Freeze Taylor data at x_k and assign regularization coefficients.

    reg_obj is the order-(p+1) weight on the objective model, reg_step the
    extra order-(q+1) weight on it, reg_con the per-constraint order-(q+1)
    weights. The (p, q) pair decides which weights land in the quadratic
    (rho) and which in the cubic (cub) slot:

      (2, 2)  cub = (reg_obj + reg_step, reg_con...),  rho = 0
      (2, 1)  cub = (reg_obj, 0...),  rho = (reg_step, reg_con...)
      (1, 1)  rho = (reg_obj + reg_step, reg_con...),  cub = 0
    """
    if (p, q) not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported orders (p, q) = ({p}, {q})")
    if reg_obj <= 0 or reg_step <= 0:
        raise ValueError("objective regularization weights must be positive")
    reg_con = np.broadcast_to(np.asarray(reg_con, dtype=np.float64), (inst.m,)).copy()
    if np.any(reg_con <= 0):
        raise ValueError("constraint regularization weights must be positive")
    td = taylor_data(inst, x_k, p, q)
    rho = np.zeros(inst.m + 1)
    cub = np.zeros(inst.m + 1)
    if (p, q) == (2, 2):
        cub[0] = reg_obj + reg_step
        cub[1:] = reg_con
    elif (p, q) == (2, 1):
        cub[0] = reg_obj
        rho[0] = reg_step
        rho[1:] = reg_con
    else:
        rho[0] = reg_obj + reg_step
        rho[1:] = reg_con
    return SubproblemModel(td=td, p=p, q=q, rho=rho, cub=cub)


def model_value(model: SubproblemModel, i: int, y) -> float:
    """Value of model_i at y: Taylor part plus its norm-power regularizers."""
    td = model.td
    dx = np.asarray(y, dtype=np.float64) - td.center
    out = td.vals[i] + float(td.grads[i] @ dx)
    k = td.hess_pos[i]
    if k >= 0:
        out += 0.5 * float(dx @ (td.hess[k] @ dx))
    r = float(np.linalg.norm(dx))
    return out + 0.5 * model.rho[i] * r * r + model.cub[i] * r ** 3 / 6.0


def _check_multipliers(model: SubproblemModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (model.m + 1,):
        raise ValueError(f"multiplier vector has shape {u.shape}, expected ({model.m + 1},)")
    if u[0] != 1.0 or np.any(u < 0):
        raise ValueError("multipliers must satisfy u[0] = 1 and u >= 0")
    return u


def lagrangian(model: SubproblemModel, x, u) -> float:
    """Subproblem Lagrangian sum_i u_i model_i(x) at multipliers u (u_0 = 1)."""
    u = _check_multipliers(model, u)
    return float(sum(u[i] * model_value(model, i, x) for i in range(model.m + 1)
                     if u[i] != 0.0))


def aggregate(model: SubproblemModel, u, w: float):
    """Weighted gradient g(u) and curvature matrix H(u, w) of the dual system."""
    td = model.td
    return _kernels.assemble_system(u, w, td.grads, td.hess, td.hess_pos, model.rho)


def make_dual_state(model: SubproblemModel, u, w: Optional[float]) -> DualState:
    """Assemble, factor, and recover the primal displacement at (u, w).

    Raises NotPositiveDefinite when (u, w) lies outside the dual domain.
    """
    u = _check_multipliers(model, u)
    weff = 0.0 if w is None else float(w)
    if w is not None and weff < 0:
        raise ValueError("w must be nonnegative")
    g, h = aggregate(model, u, weff)
    factor = cholesky(h)
    d = -_kernels.chol_solve(factor.lower, g)
    return DualState(u=u, w=None if w is None else weff, chol=factor,
                     d=d, r=float(np.linalg.norm(d)))


def dual_value(model: SubproblemModel, state: DualState) -> float:
    """Concave dual objective at a state of D."""
    td = model.td
    u = state.u
    g, _ = aggregate(model, u, 0.0 if state.w is None else state.w)
    out = float(u @ td.vals) + 0.5 * float(g @ state.d)
    if model.has_w:
        mt = float(u @ model.cub)
        out -= state.w ** 3 / (12.0 * mt * mt)
    return out


def dual_gradient(model: SubproblemModel, state: DualState):
    """Ascent gradient of the dual value: (d/du_1..m, d/dw or None).

    d/du_i = f_i + <g_i, d> + <H_i d, d>/2 + rho_i r^2 / 2
             + cub_i w^3 / (6 Mt(u)^3)
    d/dw   = r^2 / 4 - w^2 / (4 Mt(u)^2)
    """
    td = model.td
    d = state.d
    r2 = state.r ** 2
    grad_u = np.empty(model.m)
    wterm = 0.0
    grad_w = None
    if model.has_w:
        mt = float(state.u @ model.cub)
        wterm = state.w ** 3 / (6.0 * mt ** 3)
        grad_w = 0.25 * r2 - state.w ** 2 / (4.0 * mt * mt)
    for i in range(1, model.m + 1):
        gi = td.vals[i] + float(td.grads[i] @ d) + 0.5 * model.rho[i] * r2
        k = td.hess_pos[i]
        if k >= 0:
            gi += 0.5 * float(d @ (td.hess[k] @ d))
        grad_u[i - 1] = gi + model.cub[i] * wterm
    return grad_u, grad_w


def duality_gap(model: SubproblemModel, state: DualState) -> float:
    """Closed-form gap between the recovered primal point and the dual value.

    Zero identically when p = q = 1; otherwise vanishes exactly at
    w = Mt(u) * r, which is where the ascent drives w.
    """
    if not model.has_w:
        return 0.0
    mt = float(state.u @ model.cub)
    ratio = state.w / mt
    return (mt / 12.0) * (ratio + 2.0 * state.r) * (state.r - ratio) ** 2


def initialize_dual(model: SubproblemModel, u=None, w_start: float = 1.0) -> DualState:
    """Entry point of D: multipliers u (default (1, 0, ..., 0)) and, for
    p = 2, the smallest w in {w_start * 2^j} whose curvature matrix factors."""
    if u is None:
        u = np.zeros(model.m + 1)
        u[0] = 1.0
    if not model.has_w:
        return make_dual_state(model, u, None)
    w = float(w_start)
    for _ in range(300):
        try:
            return make_dual_state(model, u, w)
        except NotPositiveDefinite:
            w *= 2.0
    raise RuntimeError("could not enter the dual domain by doubling w")


def _null_ray_extension(model: SubproblemModel, u, w, d, r):
    """Primal recovery at a boundary-attained dual maximum.

    When the ascent stalls with H(u, w) (near-)singular and the recovered
    step shorter than w / Mt(u), the displacement can be extended along a
    null eigenvector v of H without disturbing g + H dx = 0, and the
    primal-dual gap vanishes exactly at ||d + t v|| = w / Mt(u). Returns the
    extended displacement or None when the stall is not of this kind.
    """
    if not model.has_w:
        return None
    mt = float(u @ model.cub)
    target = w / mt
    if not np.isfinite(target) or target <= r * (1.0 + 1e-10):
        return None
    g, h = aggregate(model, u, w)
    eigval, eigvec = np.linalg.eigh(h)
    scale = max(abs(eigval[0]), abs(eigval[-1]), 1.0)
    if eigval[0] > 1e-6 * scale:
        return None                      # interior stall, no null ray
    v = eigvec[:, 0]
    # || d + t v ||^2 = target^2, ||v|| = 1
    b = float(d @ v)
    disc = b * b - (r * r - target * target)
    if disc < 0.0:
        return None
    root = np.sqrt(disc)
    best = None
    best_viol = np.inf
    for t in (-b + root, -b - root):
        cand = d + t * v
        viol = 0.0
        for i in range(1, model.m + 1):
            si = model_value(model, i, model.td.center + cand)
            if si > viol:
                viol = si
        if viol < best_viol - 1e-15 or best is None:
            best = cand
            best_viol = viol
    return best


def solve_dual(model: SubproblemModel, tol: DualTolerances = None,
               warm_u=None, alpha0: float = 1.0,
               record_path: bool = False) -> SubproblemSolution:
    """Globally solve the subproblem by projected gradient ascent over D.

    Returns the recovered primal point with its multipliers, gap certificate,
    and model constraint values. Raises InfeasibleModel when no candidate
    ever satisfied the feasibility condition and the best visited one missed
    it. alpha0 seeds the adaptive step size (callers may carry it across
    consecutive solves).
    """
    if tol is None:
        tol = DualTolerances()
    td = model.td
    start_u = None
    if warm_u is not None:
        start_u = np.concatenate(([1.0], np.maximum(np.asarray(warm_u, dtype=np.float64), 0.0)))
    try:
        state0 = initialize_dual(model, u=start_u)
    except NotPositiveDefinite:
        state0 = initialize_dual(model)
    u0 = state0.u
    w0 = 0.0 if state0.w is None else state0.w
    (u, w, d, r, beta, gap, s, status, iters, alpha, beta_path, path_len,
     bf_found, bf_d, bf_obj) = _kernels.dual_ascent(
        td.vals, td.grads, td.hess, td.hess_pos, model.rho, model.cub,
        model.q, min(model.p, model.q), model.has_w,
        u0, w0, alpha0, tol.eta1, tol.eta2, tol.eta3, tol.gap_tol, tol.max_iters,
    )
    if status == _kernels.STATUS_INFEASIBLE:
        if model.m and np.max(td.vals[1:]) <= 0.0:
            # the model is feasible at its own center, so the miss is a
            # degenerate (hard-case) dual stall, not infeasibility; return
            # the best certificate and let the outer loop react
            status = _kernels.STATUS_MAX_ITERS
        else:
            raise InfeasibleModel(
                f"model constraints unmet after {iters} ascent steps "
                f"(max model value {np.max(s):.3e})"
            )
    if status == _kernels.STATUS_BAD_INIT:
        raise RuntimeError("dual ascent started outside the PD domain")
    status_name = _STATUS_NAMES[status]
    if status == _kernels.STATUS_MAX_ITERS:
        ext = _null_ray_extension(model, u, w, d, float(r))
        if ext is not None:
            d, r, gap, s, upgraded = _certify_extension(model, u, w, beta, ext, tol)
            if upgraded:
                status_name = "converged"
        if status_name == "max_iters" and bf_found:
            # degenerate dual (hard case): no certified point is available,
            # fall back to the best model-feasible descent candidate
            x_bf = td.center + bf_d
            d = bf_d
            r = float(np.linalg.norm(bf_d))
            s = np.array([model_value(model, i, x_bf)
                          for i in range(1, model.m + 1)])
            gap = lagrangian(model, x_bf, u) - beta
            status_name = "feasible_only"
    x_next = td.center + d
    primal = lagrangian(model, x_next, u)
    return SubproblemSolution(
        x_next=x_next,
        u=u[1:].copy(),
        w=w if model.has_w else None,
        gap=float(gap),
        primal_value=primal,
        model_constraint_values=s,
        dual_iters=int(iters),
        status=status_name,
        beta=float(beta),
        alpha=float(alpha),
        beta_path=beta_path[:path_len].copy() if record_path else None,
    )


def _certify_extension(model: SubproblemModel, u, w, beta, ext, tol):
    """Re-evaluate the gap and the approximate-KKT certificates at an
    extended displacement; along the null ray the Lagrangian x-gradient is
    analytically zero, so stationarity is checked as a direct residual."""
    td = model.td
    rho = float(np.linalg.norm(ext))
    x_ext = td.center + ext
    theta = lagrangian(model, x_ext, u)
    gap = theta - beta
    s = np.array([model_value(model, i, x_ext) for i in range(1, model.m + 1)])
    fq = math.factorial(model.q + 1)
    thr = rho ** (model.q + 1) / fq
    ok = gap <= tol.gap_tol * (1.0 + abs(beta)) and gap >= -1e-9 * (1.0 + abs(beta))
    for i in range(model.m):
        if abs(u[i + 1] * s[i]) > tol.eta2 * thr or s[i] > tol.eta3 * thr:
            ok = False
    g_u, h = aggregate(model, u, w)
    mt = float(u @ model.cub)
    grad = (g_u + h @ ext - 0.5 * w * ext
            + 0.5 * mt * rho * ext)
    pq_min = min(model.p, model.q)
    if float(np.linalg.norm(grad)) > tol.eta1 * rho ** pq_min:
        ok = False
    return ext, rho, float(gap), s, ok
