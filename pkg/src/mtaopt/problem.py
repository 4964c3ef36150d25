"""Problem oracles, Taylor data, and the random benchmark instance families.

An instance bundles value/gradient/Hessian oracles for the objective F_0 and
constraints F_1..F_m together with upper bounds on their gradient- and
Hessian-Lipschitz constants and a feasible starting point. Two generated
families are provided:

  nonconvex   F_0(x) = log(1 + exp(a_0.x)) + x.Q_0.x/2 + c_0.x + d_0
              F_i(x) = log((a_i.x + b_i)^2/2 + 1) + x.Q_i.x/2 + c_i.x + d_i
              with Q_i random symmetric indefinite

  convex      logistic nonlinearity for every index, Q_i = R_i^T R_i (PSD),
              Q_0 additionally shifted by sigma*I for uniform convexity

Both families make x0 = 0 strictly feasible with margin DELTA_FEAS by the
choice of the constant terms d_i.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

DELTA_FEAS = 0.1

# nonlinearity kinds per oracle index
_NL_LOGISTIC = 0
_NL_LOGQUAD = 1


class InfeasibleStart(ValueError):
    """The supplied starting point violates a constraint."""


def _softplus(t):
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logquad(t):
    return np.log(0.5 * t * t + 1.0)


def _nl_value(kind, t):
    return np.where(kind == _NL_LOGISTIC, _softplus(t), _logquad(t))


def _nl_d1(kind, t):
    s = _sigmoid(t)
    return np.where(kind == _NL_LOGISTIC, s, 2.0 * t / (t * t + 2.0))


def _nl_d2(kind, t):
    s = _sigmoid(t)
    tt = t * t
    return np.where(kind == _NL_LOGISTIC, s * (1.0 - s),
                    (4.0 - 2.0 * tt) / ((tt + 2.0) ** 2))


class ProblemInstance:
    """Oracle bundle for a smooth inequality-constrained problem.

    Family instances evaluate from stored arrays; custom instances delegate
    to a user oracle ``oracle(i, x, order) -> (value, grad|None, hess|None)``.
    Construction checks that x0 is feasible and, unless disabled, that each
    gradient oracle matches central finite differences at 10 random points.
    """

    def __init__(self, n, m, lip_grad, lip_hess, x0, convex=None, oracle=None,
                 family="custom", seed=None, data=None, check_oracles=True):
        self.n = int(n)
        self.m = int(m)
        self.lip_grad = np.asarray(lip_grad, dtype=np.float64)
        self.lip_hess = np.asarray(lip_hess, dtype=np.float64)
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.family = family
        self.seed = seed
        self.data = data
        self._oracle = oracle
        if convex is None:
            convex = np.zeros(self.m + 1, dtype=bool)
        self.convex = np.asarray(convex, dtype=bool)
        if self.n < 1 or self.m < 0:
            raise ValueError(f"bad dimensions n={n}, m={m}")
        if self.lip_grad.shape != (self.m + 1,) or self.lip_hess.shape != (self.m + 1,):
            raise ValueError("Lipschitz bound arrays must have length m+1")
        if not (np.all(self.lip_grad > 0) and np.all(self.lip_hess > 0)):
            raise ValueError("Lipschitz bounds must be strictly positive")
        if self.x0.shape != (self.n,) or not np.all(np.isfinite(self.x0)):
            raise ValueError("x0 must be a finite vector of length n")
        if data is None and oracle is None:
            raise ValueError("either family data or a custom oracle is required")
        viol = max_violation(self, self.x0)
        if viol > 0.0:
            raise InfeasibleStart(f"x0 violates a constraint by {viol:.3e}")
        if check_oracles:
            self._self_check()

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, i, x, order=0):
        """Value and requested derivatives of F_i at x.

        order 0 returns (value, None, None), order 1 adds the gradient,
        order 2 adds the Hessian.
        """
        if not 0 <= i <= self.m:
            raise IndexError(f"oracle index {i} out of range 0..{self.m}")
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.n},)")
        if self.data is None:
            val, grad, hess = self._oracle(i, x, order)
            val = float(val)
            if order >= 1:
                grad = np.asarray(grad, dtype=np.float64)
            else:
                grad = None
            if order >= 2:
                hess = np.asarray(hess, dtype=np.float64)
            else:
                hess = None
            return val, grad, hess
        d = self.data
        a = d["a"][i]
        t = float(a @ x + d["b_full"][i])
        kind = d["kind"][i]
        q = d["Q"][i]
        qx = q @ x
        val = float(_nl_value(kind, t)) + 0.5 * float(x @ qx) + float(d["c"][i] @ x) + d["d"][i]
        grad = None
        hess = None
        if order >= 1:
            grad = float(_nl_d1(kind, t)) * a + qx + d["c"][i]
        if order >= 2:
            hess = float(_nl_d2(kind, t)) * np.outer(a, a) + q
        return val, grad, hess

    def values(self, x):
        """All F_i(x) as one array of length m+1."""
        x = np.asarray(x, dtype=np.float64)
        if self.data is None:
            return np.array([self.evaluate(i, x, 0)[0] for i in range(self.m + 1)])
        d = self.data
        t = d["a"] @ x + d["b_full"]
        quad = 0.5 * ((d["Q"] @ x) @ x)
        return _nl_value(d["kind"], t) + quad + d["c"] @ x + d["d"]

    def gradients(self, x):
        """All gradients stacked as an (m+1, n) array."""
        x = np.asarray(x, dtype=np.float64)
        if self.data is None:
            return np.stack([self.evaluate(i, x, 1)[1] for i in range(self.m + 1)])
        d = self.data
        t = d["a"] @ x + d["b_full"]
        return _nl_d1(d["kind"], t)[:, None] * d["a"] + d["Q"] @ x + d["c"]

    def _self_check(self):
        rng = np.random.default_rng(0x5EED ^ (self.seed or 0))
        for _ in range(10):
            x = self.x0 + rng.uniform(-1.0, 1.0, self.n)
            h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
            g = self.gradients(x)
            fd = np.empty_like(g)
            for t in range(self.n):
                e = np.zeros(self.n)
                e[t] = h
                fd[:, t] = (self.values(x + e) - self.values(x - e)) / (2.0 * h)
            err = np.linalg.norm(fd - g, axis=1)
            scale = 1.0 + np.linalg.norm(g, axis=1)
            if np.any(err > 1e-5 * scale):
                i = int(np.argmax(err / scale))
                raise RuntimeError(
                    f"gradient oracle {i} disagrees with finite differences "
                    f"(error {err[i]:.3e} at scale {scale[i]:.3e})"
                )


@dataclass
class TaylorData:
    """Frozen values, gradients, and (where the order asks) Hessians at a point.

    hess stacks only the stored second-order blocks; hess_pos maps oracle
    index -> stack position, with -1 for indices carrying no Hessian.
    """

    center: np.ndarray
    vals: np.ndarray
    grads: np.ndarray
    hess: np.ndarray
    hess_pos: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.center)):
            raise ValueError("Taylor center must be finite")
        for k in range(self.hess.shape[0]):
            if not np.array_equal(self.hess[k], self.hess[k].T):
                raise ValueError("stored Hessians must be exactly symmetric")


def taylor_data(inst: ProblemInstance, x, p: int, q: int) -> TaylorData:
    """Fetch oracle data at x: order p for the objective, q for constraints."""
    x = np.asarray(x, dtype=np.float64)
    orders = [p] + [q] * inst.m
    vals = np.empty(inst.m + 1)
    grads = np.empty((inst.m + 1, inst.n))
    blocks = []
    hess_pos = np.full(inst.m + 1, -1, dtype=np.int64)
    for i, order in enumerate(orders):
        v, g, h = inst.evaluate(i, x, order=max(order, 1))
        vals[i] = v
        grads[i] = g
        if order >= 2:
            hess_pos[i] = len(blocks)
            blocks.append(h)
    hess = np.stack(blocks) if blocks else np.zeros((0, inst.n, inst.n))
    return TaylorData(center=x.copy(), vals=vals, grads=grads,
                      hess=np.ascontiguousarray(hess), hess_pos=hess_pos)


def taylor_value(td: TaylorData, i: int, order: int, y) -> float:
    """Evaluate the stored Taylor polynomial of F_i around the center at y."""
    y = np.asarray(y, dtype=np.float64)
    dx = y - td.center
    out = td.vals[i] + float(td.grads[i] @ dx)
    if order >= 2:
        k = td.hess_pos[i]
        if k < 0:
            raise ValueError(f"no Hessian stored for index {i}")
        out += 0.5 * float(dx @ (td.hess[k] @ dx))
    return out


def max_violation(inst: ProblemInstance, x) -> float:
    """max(0, max_i F_i(x)) over the constraints; 0 when there are none."""
    if inst.m == 0:
        return 0.0
    return float(max(0.0, np.max(inst.values(x)[1:])))


# -- generated families -----------------------------------------------------


def _sym_uniform(rng, n):
    """Symmetric matrix with entries uniform in [-1, 1] (mirrored triangle)."""
    q = np.zeros((n, n))
    for i in range(n):
        row = rng.uniform(-1.0, 1.0, n - i)
        q[i, i:] = row
        q[i:, i] = row
    return q


def _indefinite_sym(rng, n):
    q = _sym_uniform(rng, n)
    if 2 <= n <= 5:
        while True:
            eigs = np.linalg.eigvalsh(q)
            if eigs[0] < 0.0 < eigs[-1]:
                break
            q = _sym_uniform(rng, n)
    return q


def _family_instance(n, m, seed, family, arrays, check_oracles):
    a, b, c, d, q_stack, kind, lip_grad, lip_hess, convex = arrays
    b_full = np.concatenate(([0.0], b)) if m > 0 else np.zeros(1)
    data = {
        "a": a, "b": b, "b_full": b_full, "c": c, "d": d,
        "Q": q_stack, "kind": kind,
    }
    return ProblemInstance(
        n=n, m=m, lip_grad=lip_grad, lip_hess=lip_hess, x0=np.zeros(n),
        convex=convex, family=family, seed=seed, data=data,
        check_oracles=check_oracles,
    )


def generate_benchmark(n: int, m: int, seed: int,
                       check_oracles: bool = True) -> ProblemInstance:
    """Random nonconvex instance; x0 = 0 is strictly feasible with margin 0.1.

    Sampling per index i = 0..m: direction a_i and linear term c_i uniform in
    [-1, 1]^n, Q_i symmetric with uniform entries (resampled until indefinite
    for 2 <= n <= 5), offsets b_i uniform in [0.5, 2], then d_i chosen so that
    F_i(0) = -DELTA_FEAS. Lipschitz bounds combine the nonlinearity constants
    with the Frobenius norm of Q_i (a cheap, valid upper bound).
    """
    if n < 1 or m < 0:
        raise ValueError(f"bad dimensions n={n}, m={m}")
    rng = np.random.default_rng(seed)
    a = np.empty((m + 1, n))
    b = np.empty(m)
    c = np.empty((m + 1, n))
    d = np.empty(m + 1)
    q_stack = np.empty((m + 1, n, n))
    for i in range(m + 1):
        a[i] = rng.uniform(-1.0, 1.0, n)
        q_stack[i] = _indefinite_sym(rng, n)
        c[i] = rng.uniform(-1.0, 1.0, n)
        if i == 0:
            d[0] = rng.uniform(-1.0, 1.0)
        else:
            b[i - 1] = rng.uniform(0.5, 2.0)
            d[i] = -math.log(b[i - 1] ** 2 / 2.0 + 1.0) - DELTA_FEAS
    anorm = np.linalg.norm(a, axis=1)
    qnorm = np.array([np.linalg.norm(q_stack[i], "fro") for i in range(m + 1)])
    lip_grad = np.concatenate(([anorm[0] ** 2], 2.0 * anorm[1:] ** 2)) + qnorm
    lip_hess = np.concatenate(([2.0 * anorm[0] ** 3], 4.0 * anorm[1:] ** 3))
    kind = np.array([_NL_LOGISTIC] + [_NL_LOGQUAD] * m, dtype=np.int64)
    convex = np.zeros(m + 1, dtype=bool)
    return _family_instance(n, m, seed, "nonconvex",
                            (a, b, c, d, q_stack, kind, lip_grad, lip_hess, convex),
                            check_oracles)


def generate_convex_benchmark(n: int, m: int, seed: int, sigma: float = 0.0,
                              check_oracles: bool = True) -> ProblemInstance:
    """Random convex instance: PSD quadratics and logistic nonlinearities.

    Q_i = R_i^T R_i with R_i uniform in [-1, 1]; Q_0 gains sigma * I so the
    objective is strongly convex when sigma > 0. d_i again makes F_i(0)
    equal to -DELTA_FEAS.
    """
    if n < 1 or m < 0:
        raise ValueError(f"bad dimensions n={n}, m={m}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    a = np.empty((m + 1, n))
    b = np.zeros(m)
    c = np.empty((m + 1, n))
    d = np.empty(m + 1)
    q_stack = np.empty((m + 1, n, n))
    for i in range(m + 1):
        a[i] = rng.uniform(-1.0, 1.0, n)
        r = rng.uniform(-1.0, 1.0, (n, n))
        q = r.T @ r
        q = 0.5 * (q + q.T)
        if i == 0:
            q = q + sigma * np.eye(n)
        q_stack[i] = q
        c[i] = rng.uniform(-1.0, 1.0, n)
        if i == 0:
            d[0] = rng.uniform(-1.0, 1.0)
        else:
            d[i] = -math.log(2.0) - DELTA_FEAS
    anorm = np.linalg.norm(a, axis=1)
    qnorm = np.array([np.linalg.norm(q_stack[i], "fro") for i in range(m + 1)])
    lip_grad = anorm ** 2 + qnorm
    lip_hess = 2.0 * anorm ** 3
    kind = np.full(m + 1, _NL_LOGISTIC, dtype=np.int64)
    convex = np.ones(m + 1, dtype=bool)
    return _family_instance(n, m, seed, "convex",
                            (a, b, c, d, q_stack, kind, lip_grad, lip_hess, convex),
                            check_oracles)


# -- serialization ----------------------------------------------------------


def _emit(obj, out):
    """Minimal JSON emitter printing floats with 17 significant digits."""
    if isinstance(obj, dict):
        out.append("{")
        for j, (k, v) in enumerate(obj.items()):
            if j:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _emit(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for j, v in enumerate(obj):
            if j:
                out.append(",")
            _emit(v, out)
        out.append("]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, float):
        out.append(format(obj, ".17g"))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif obj is None:
        out.append("null")
    else:
        out.append(json.dumps(obj))
    return out


def dumps_json(obj) -> str:
    return "".join(_emit(obj, []))


def instance_to_dict(inst: ProblemInstance) -> dict:
    if inst.data is None:
        raise ValueError("only generated family instances are serializable")
    d = inst.data
    return {
        "n": inst.n,
        "m": inst.m,
        "seed": inst.seed,
        "family": inst.family,
        "a": [list(map(float, row)) for row in d["a"]],
        "b": [float(v) for v in d["b"]],
        "c": [list(map(float, row)) for row in d["c"]],
        "d": [float(v) for v in d["d"]],
        "Q": [list(map(float, q.reshape(-1))) for q in d["Q"]],
        "x0": [float(v) for v in inst.x0],
        "lip_grad": [float(v) for v in inst.lip_grad],
        "lip_hess": [float(v) for v in inst.lip_hess],
        "convexity_flag": [bool(v) for v in inst.convex],
    }


def save_instance(inst: ProblemInstance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_json(instance_to_dict(inst)))
        fh.write("\n")


def instance_from_dict(doc: dict, check_oracles: bool = True) -> ProblemInstance:
    n = int(doc["n"])
    m = int(doc["m"])
    family = doc["family"]
    if family not in ("nonconvex", "convex"):
        raise ValueError(f"unknown instance family {family!r}")
    a = np.asarray(doc["a"], dtype=np.float64).reshape(m + 1, n)
    b = np.asarray(doc["b"], dtype=np.float64).reshape(m)
    c = np.asarray(doc["c"], dtype=np.float64).reshape(m + 1, n)
    d = np.asarray(doc["d"], dtype=np.float64).reshape(m + 1)
    q_stack = np.asarray(doc["Q"], dtype=np.float64).reshape(m + 1, n, n)
    lip_grad = np.asarray(doc["lip_grad"], dtype=np.float64)
    lip_hess = np.asarray(doc["lip_hess"], dtype=np.float64)
    convex = np.asarray(doc["convexity_flag"], dtype=bool)
    if family == "nonconvex":
        kind = np.array([_NL_LOGISTIC] + [_NL_LOGQUAD] * m, dtype=np.int64)
    else:
        kind = np.full(m + 1, _NL_LOGISTIC, dtype=np.int64)
    x0 = np.asarray(doc["x0"], dtype=np.float64)
    b_full = np.concatenate(([0.0], b)) if m > 0 else np.zeros(1)
    data = {"a": a, "b": b, "b_full": b_full, "c": c, "d": d,
            "Q": q_stack, "kind": kind}
    inst = ProblemInstance(
        n=n, m=m, lip_grad=lip_grad, lip_hess=lip_hess, x0=x0, convex=convex,
        family=family, seed=doc.get("seed"), data=data,
        check_oracles=check_oracles,
    )
    return inst


def load_instance(path, check_oracles: bool = True) -> ProblemInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh), check_oracles=check_oracles)
