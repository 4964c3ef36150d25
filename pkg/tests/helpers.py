"""Shared test oracles, independent of the code paths they check."""

import numpy as np


def charpoly_eigs(a):
    """Eigenvalues of a small symmetric matrix via the characteristic
    polynomial (Faddeev-LeVerrier coefficients, then polynomial roots).

    Independent of any Cholesky-based code under test; meant for n <= 5.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    coeffs = [1.0]
    mk = np.zeros_like(a)
    c = 1.0
    for k in range(1, n + 1):
        mk = a @ mk + c * np.eye(n)
        c = -np.trace(a @ mk) / k
        coeffs.append(c)
    roots = np.roots(coeffs)
    return np.sort(roots.real)


def taylor_poly(inst, i, x, q, y):
    """Taylor polynomial of F_i around x evaluated at y, built directly from
    oracle calls (no TaylorData machinery)."""
    order = max(q, 1)
    val, grad, hess = inst.evaluate(i, x, order=order)
    dx = np.asarray(y) - np.asarray(x)
    out = val + float(grad @ dx)
    if q >= 2:
        out += 0.5 * float(dx @ (hess @ dx))
    return out


def model_values_on_grid(model, points):
    """All model_i values at a batch of points, vectorized for grid oracles."""
    td = model.td
    dx = points - td.center
    r = np.linalg.norm(dx, axis=1)
    out = np.empty((model.m + 1, len(points)))
    for i in range(model.m + 1):
        vals = td.vals[i] + dx @ td.grads[i]
        k = td.hess_pos[i]
        if k >= 0:
            vals = vals + 0.5 * np.einsum("pi,ij,pj->p", dx, td.hess[k], dx)
        out[i] = (vals + 0.5 * model.rho[i] * r ** 2
                  + model.cub[i] * r ** 3 / 6.0)
    return out


def scalar_line_instance():
    """1-D instance with objective F_0(x) = x and no constraints."""
    from mtaopt.problem import ProblemInstance

    def oracle(i, x, order):
        grad = np.array([1.0]) if order >= 1 else None
        hess = np.array([[0.0]]) if order >= 2 else None
        return float(x[0]), grad, hess

    return ProblemInstance(n=1, m=0, lip_grad=np.array([1e-9]),
                           lip_hess=np.array([1e-9]), x0=np.zeros(1),
                           oracle=oracle, check_oracles=False)


def quadratic_instance(q_mat, b):
    """Unconstrained strongly convex quadratic 0.5 x'Qx - b'x."""
    from mtaopt.problem import ProblemInstance

    q_mat = np.asarray(q_mat, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    def oracle(i, x, order):
        grad = q_mat @ x - b if order >= 1 else None
        hess = q_mat.copy() if order >= 2 else None
        return 0.5 * float(x @ q_mat @ x) - float(b @ x), grad, hess

    lip = np.array([max(float(np.linalg.norm(q_mat, "fro")), 1e-9)])
    return ProblemInstance(n=len(b), m=0, lip_grad=lip,
                           lip_hess=np.array([1e-9]), x0=np.zeros(len(b)),
                           oracle=oracle, check_oracles=False)


def random_dual_state(model, rng, u_scale=1.0):
    """A random interior point of the dual domain of a model."""
    from mtaopt.subproblem import initialize_dual

    u = np.zeros(model.m + 1)
    u[0] = 1.0
    u[1:] = rng.uniform(0.0, u_scale, model.m)
    state = initialize_dual(model, u=u)
    if state.w is None:
        return state
    # push a bit into the interior and add spread
    w = (state.w + rng.uniform(0.0, 2.0)) * rng.uniform(1.0, 2.0)
    return initialize_dual(model, u=u, w_start=w)
