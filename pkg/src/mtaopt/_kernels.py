"""Hot numeric kernels: dense Cholesky, triangular solves, and the projected
gradient ascent loop of the dual subproblem solver.

Every function here is written in a numba-compilable subset of numpy. The
backend is chosen once at import time from the ``MTA_BACKEND`` environment
variable:

    MTA_BACKEND=numba   force numba @njit kernels (ImportError if unavailable)
    MTA_BACKEND=numpy   force the interpreted pure-numpy path
    MTA_BACKEND=auto    numba when importable, numpy otherwise (default)

Both paths run the same source, so results differ only by floating-point
scheduling inside numba-generated code (none observed at the sizes used here).
``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

import numpy as np

BACKEND_ENV = "MTA_BACKEND"

# Dual ascent status codes shared with the python layer.
STATUS_CONVERGED = 0
STATUS_MAX_ITERS = 1
STATUS_DEGENERATE = 2
STATUS_INFEASIBLE = 3
STATUS_BAD_INIT = 4

PIVOT_REL_TOL = 1e-12  # PD pivot threshold, relative to the largest diagonal
STEP_COLLAPSE = 1e-18  # ascent step size below which no progress is possible
DEGENERATE_R = 1e-14   # step norm below which the dual point is a fixed point


def _select_backend() -> str:
    choice = os.environ.get(BACKEND_ENV, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{BACKEND_ENV} must be one of 'auto', 'numba', 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _select_backend()

if BACKEND == "numba":
    from numba import njit

    _jit = njit(cache=True, nogil=True)
else:
    def _jit(fn):
        return fn


@_jit
def chol_factor(a):
    """Lower Cholesky factor of a symmetric matrix.

    Returns (lower, ok). ok is False as soon as a pivot falls at or below
    PIVOT_REL_TOL * max(diag(a)), which doubles as the positive-definiteness
    test used for dual-domain membership.
    """
    n = a.shape[0]
    lower = np.zeros((n, n))
    maxd = a[0, 0]
    for i in range(1, n):
        if a[i, i] > maxd:
            maxd = a[i, i]
    eps = PIVOT_REL_TOL * maxd
    for j in range(n):
        acc = a[j, j]
        for k in range(j):
            acc -= lower[j, k] * lower[j, k]
        if not np.isfinite(acc) or acc <= eps:
            return lower, False
        ljj = np.sqrt(acc)
        lower[j, j] = ljj
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= lower[i, k] * lower[j, k]
            lower[i, j] = s / ljj
    return lower, True


@_jit
def chol_solve(lower, b):
    """Solve (L L^T) x = b given the lower factor L."""
    n = lower.shape[0]
    y = np.zeros(n)
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= lower[i, k] * y[k]
        y[i] = acc / lower[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= lower[k, i] * x[k]
        x[i] = acc / lower[i, i]
    return x


@_jit
def assemble_system(u, w, grads, hess, hess_pos, rho):
    """Aggregate gradient and curvature matrix of the dual system at (u, w).

    g = sum_i u_i grads[i]
    h = sum_i u_i hess[hess_pos[i]] + (sum_i u_i rho[i] + w/2) I

    hess holds only the stored second-order blocks; hess_pos[i] is the stack
    position for model index i, or -1 when index i carries no Hessian.
    """
    mp1 = grads.shape[0]
    n = grads.shape[1]
    g = np.dot(u, grads)
    h = np.zeros((n, n))
    for i in range(mp1):
        k = hess_pos[i]
        if k >= 0 and u[i] != 0.0:
            h += u[i] * hess[k]
    shift = 0.5 * w + np.dot(u, rho)
    for t in range(n):
        h[t, t] += shift
    return g, h


@_jit
def eval_dual_state(u, w, vals, grads, hess, hess_pos, rho, cub, has_w):
    """Evaluate the dual objective and its certificates at (u, w).

    Returns (ok, lower, d, r, beta, gap, s, gu) where lower is the Cholesky
    factor of the curvature matrix, d the recovered primal displacement
    -H(u,w)^{-1} g(u), r its norm, beta the dual value, gap the closed-form
    primal-dual gap, s the model constraint values at the recovered point,
    and gu the ascent gradient with respect to u_1..u_m. ok is False when
    (u, w) lies outside the PD domain.
    """
    m = vals.shape[0] - 1
    n = grads.shape[1]
    g, h = assemble_system(u, w, grads, hess, hess_pos, rho)
    lower, ok = chol_factor(h)
    d = np.zeros(n)
    s = np.zeros(m)
    gu = np.zeros(m)
    if not ok:
        return False, lower, d, 0.0, 0.0, 0.0, s, gu
    hinv_g = chol_solve(lower, g)
    for t in range(n):
        d[t] = -hinv_g[t]
    r = np.sqrt(np.dot(d, d))
    beta = np.dot(u, vals) + 0.5 * np.dot(g, d)
    gap = 0.0
    wterm = 0.0
    if has_w:
        mt = np.dot(u, cub)
        beta -= w * w * w / (12.0 * mt * mt)
        ratio = w / mt
        gap = (mt / 12.0) * (ratio + 2.0 * r) * (r - ratio) * (r - ratio)
        wterm = w * w * w / (6.0 * mt * mt * mt)
    r2 = r * r
    r3 = r2 * r
    for i in range(1, m + 1):
        base = vals[i] + np.dot(grads[i], d) + 0.5 * rho[i] * r2
        k = hess_pos[i]
        if k >= 0:
            base += 0.5 * np.dot(d, np.dot(hess[k], d))
        s[i - 1] = base + cub[i] * r3 / 6.0
        if has_w:
            gu[i - 1] = base + cub[i] * wterm
        else:
            gu[i - 1] = base
    return True, lower, d, r, beta, gap, s, gu


@_jit
def _precondition(u, w, d, lower, grads, hess, hess_pos, rho, cub, has_w):
    """Inverse diagonal curvature of the dual objective at the current state.

    The exact curvature block for multiplier i is v_i^T H^{-1} v_i with
    v_i = g_i + (H_i + rho_i I) d, plus the cubic-term contribution; for w it
    is d^T H^{-1} d / 4 + w / (2 Mt^2). Scaling the ascent gradient by these
    inverse diagonals keeps the useful step size near 1 across coordinates
    of very different stiffness.
    """
    m = grads.shape[0] - 1
    pu = np.empty(m)
    mt = 0.0
    cterm = 0.0
    if has_w:
        mt = np.dot(u, cub)
        cterm = w * w * w / (2.0 * mt * mt * mt * mt)
    for i in range(1, m + 1):
        v = grads[i] + rho[i] * d
        k = hess_pos[i]
        if k >= 0:
            v = v + np.dot(hess[k], d)
        hinv_v = chol_solve(lower, v)
        hii = np.dot(v, hinv_v)
        if has_w:
            hii += cterm * cub[i] * cub[i]
        pu[i - 1] = 1.0 / (hii + 1e-12)
    pw = 0.0
    if has_w:
        hinv_d = chol_solve(lower, d)
        hww = 0.25 * np.dot(d, hinv_d) + w / (2.0 * mt * mt)
        pw = 1.0 / (hww + 1e-12)
    return pu, pw


@_jit
def dual_ascent(vals, grads, hess, hess_pos, rho, cub, q, pq_min, has_w,
                u_init, w_init, alpha0, eta1, eta2, eta3, gap_tol, max_iters):
    """Curvature-scaled projected gradient ascent over the dual domain.

    One shared step size alpha is doubled after each accepted ascent step and
    halved after a rejected one; candidates falling outside the PD domain
    count as rejections. The gradient is scaled by the inverse diagonal
    curvature of the dual (recomputed after accepted steps), without which
    the plain ascent cannot reach the tolerances below in a usable number of
    iterations. Termination requires, at the current point, all of:

      (a) gap <= gap_tol * (1 + |beta|)
      (b) |u_i s_i| <= eta2 * r^(q+1) / (q+1)!   for every constraint
      (c) max(s_i, 0) <= eta3 * r^(q+1) / (q+1)! for every constraint
      (d) ||projected u-gradient|| <= eta1 * r^pq_min

    Returns (u, w, d, r, beta, gap, s, status, iters, alpha, beta_path,
    path_len, bf_found, bf_d, bf_obj). beta_path[:path_len] is the accepted
    (nondecreasing) dual value sequence; bf_d is the best model-feasible
    recovered displacement seen along the ascent (by model objective value),
    kept as a descent fallback for degenerate duals.
    """
    m = vals.shape[0] - 1
    n = grads.shape[1]
    fq = 2.0 if q == 1 else 6.0
    u = u_init.copy()
    w = w_init
    beta_path = np.zeros(max_iters + 1)
    ok, lower, d, r, beta, gap, s, gu = eval_dual_state(
        u, w, vals, grads, hess, hess_pos, rho, cub, has_w)
    if not ok:
        return (u, w, d, r, beta, gap, s, STATUS_BAD_INIT, 0, alpha0,
                beta_path, 0, False, d, 0.0)
    pu, pw = _precondition(u, w, d, lower, grads, hess, hess_pos, rho, cub, has_w)
    beta_path[0] = beta
    path_len = 1
    alpha = alpha0
    iters = 0
    feasible_seen = False
    best_smax = np.inf
    best_slack = 0.0
    bf_found = False
    bf_d = np.zeros(n)
    bf_obj = np.inf
    status = STATUS_MAX_ITERS
    while iters < max_iters:
        thr = r ** (q + 1) / fq
        ok_comp = True
        ok_feas = True
        smax = -np.inf
        for i in range(m):
            si = s[i]
            if si > smax:
                smax = si
            if abs(u[i + 1] * si) > eta2 * thr:
                ok_comp = False
            if si > eta3 * thr:
                ok_feas = False
        if m == 0:
            smax = 0.0
        if smax < best_smax:
            best_smax = smax
            best_slack = eta3 * thr
        if ok_feas:
            feasible_seen = True
            # remember the best feasible recovered point as a descent
            # fallback for degenerate (hard-case) duals
            obj = vals[0] + np.dot(grads[0], d) + 0.5 * rho[0] * r * r
            k0 = hess_pos[0]
            if k0 >= 0:
                obj += 0.5 * np.dot(d, np.dot(hess[k0], d))
            obj += cub[0] * r * r * r / 6.0
            if obj < bf_obj:
                bf_obj = obj
                bf_found = True
                for t in range(n):
                    bf_d[t] = d[t]
        if r <= DEGENERATE_R and smax <= 0.0:
            status = STATUS_DEGENERATE
            break
        pg2 = 0.0
        for i in range(m):
            gi = gu[i]
            if u[i + 1] > 0.0 or gi > 0.0:
                pg2 += gi * gi
        ok_gap = gap <= gap_tol * (1.0 + abs(beta))
        ok_stat = np.sqrt(pg2) <= eta1 * r ** pq_min
        if ok_gap and ok_comp and ok_feas and ok_stat:
            status = STATUS_CONVERGED
            break
        gw = 0.0
        if has_w:
            mt = np.dot(u, cub)
            gw = 0.25 * r * r - w * w / (4.0 * mt * mt)
        uc = u.copy()
        for i in range(1, m + 1):
            v = u[i] + alpha * pu[i - 1] * gu[i - 1]
            uc[i] = v if v > 0.0 else 0.0
        wc = w
        if has_w:
            wc = w + alpha * pw * gw
            if wc < 0.0:
                wc = 0.0
        okc, lowc, dc, rc, bc, gapc, sc, guc = eval_dual_state(
            uc, wc, vals, grads, hess, hess_pos, rho, cub, has_w)
        iters += 1
        if okc and bc > beta:
            u = uc
            w = wc
            d = dc
            r = rc
            beta = bc
            gap = gapc
            s = sc
            gu = guc
            pu, pw = _precondition(u, w, d, lowc, grads, hess, hess_pos,
                                   rho, cub, has_w)
            beta_path[path_len] = beta
            path_len += 1
            alpha *= 2.0
        else:
            alpha *= 0.5
            if alpha < STEP_COLLAPSE:
                break
    if status == STATUS_MAX_ITERS:
        # the cap may have been hit right after a step that already satisfies
        # every termination condition; re-check before reporting failure
        thr = r ** (q + 1) / fq
        ok_comp = True
        ok_feas = True
        smax = 0.0
        for i in range(m):
            si = s[i]
            if si > smax:
                smax = si
            if abs(u[i + 1] * si) > eta2 * thr:
                ok_comp = False
            if si > eta3 * thr:
                ok_feas = False
        pg2 = 0.0
        for i in range(m):
            gi = gu[i]
            if u[i + 1] > 0.0 or gi > 0.0:
                pg2 += gi * gi
        if r <= DEGENERATE_R and smax <= 0.0:
            status = STATUS_DEGENERATE
        elif (gap <= gap_tol * (1.0 + abs(beta)) and ok_comp and ok_feas
              and np.sqrt(pg2) <= eta1 * r ** pq_min):
            status = STATUS_CONVERGED
        elif not (feasible_seen or ok_feas):
            # never visited a model-feasible candidate: infeasible only when
            # even the most nearly feasible state missed its own slack by a
            # material amount (monotone-beta acceptance cannot resolve model
            # values below ~1e-7 of the data scale, while a genuinely
            # infeasible model overshoots by orders of magnitude more)
            vscale = 1.0
            for i in range(m + 1):
                av = abs(vals[i])
                if av > vscale:
                    vscale = av
            if best_smax > best_slack and best_smax > 1e-6 * vscale:
                status = STATUS_INFEASIBLE
    return (u, w, d, r, beta, gap, s, status, iters, alpha, beta_path,
            path_len, bf_found, bf_d, bf_obj)
