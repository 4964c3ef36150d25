"""Cross-backend checks: the numpy fallback must agree with the default
backend. The backend is frozen at import, so the fallback runs in a
subprocess with MTA_BACKEND=numpy."""

import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from mtaopt import _kernels
from mtaopt.problem import generate_benchmark
from mtaopt.subproblem import build_model, solve_dual

SCRIPT = textwrap.dedent("""
    import json, sys
    import numpy as np
    from mtaopt import _kernels
    from mtaopt.problem import generate_benchmark
    from mtaopt.subproblem import build_model, solve_dual
    assert _kernels.BACKEND == "numpy", _kernels.BACKEND
    inst = generate_benchmark(6, 3, seed=21, check_oracles=False)
    model = build_model(inst, inst.x0, 2, 2, 1.2 * inst.lip_hess[0], 1.0,
                        1.2 * inst.lip_hess[1:])
    sol = solve_dual(model)
    rng = np.random.default_rng(2)
    b = rng.standard_normal((5, 5))
    a = b @ b.T + np.eye(5)
    a = 0.5 * (a + a.T)
    lower, ok = _kernels.chol_factor(a)
    x = _kernels.chol_solve(lower, rng.standard_normal(5))
    print(json.dumps({
        "x_next": sol.x_next.tolist(),
        "beta": sol.beta,
        "status": sol.status,
        "iters": sol.dual_iters,
        "lower": lower.tolist(),
        "solve": x.tolist(),
    }))
""")


@pytest.mark.skipif(_kernels.BACKEND != "numba",
                    reason="cross-backend check needs numba as the default")
def test_numpy_fallback_matches_numba():
    env = dict(os.environ, MTA_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env,
                         capture_output=True, text=True, check=True)
    got = json.loads(out.stdout)

    inst = generate_benchmark(6, 3, seed=21, check_oracles=False)
    model = build_model(inst, inst.x0, 2, 2, 1.2 * inst.lip_hess[0], 1.0,
                        1.2 * inst.lip_hess[1:])
    sol = solve_dual(model)
    assert got["status"] == sol.status
    assert got["iters"] == sol.dual_iters
    np.testing.assert_allclose(got["x_next"], sol.x_next, rtol=1e-12, atol=1e-14)
    assert got["beta"] == pytest.approx(sol.beta, rel=1e-12)

    rng = np.random.default_rng(2)
    b = rng.standard_normal((5, 5))
    a = b @ b.T + np.eye(5)
    a = 0.5 * (a + a.T)
    lower, ok = _kernels.chol_factor(a)
    assert ok
    x = _kernels.chol_solve(lower, rng.standard_normal(5))
    np.testing.assert_allclose(got["lower"], lower, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(got["solve"], x, rtol=1e-12, atol=1e-14)


def test_bad_backend_value_rejected():
    env = dict(os.environ, MTA_BACKEND="vulkan")
    out = subprocess.run([sys.executable, "-c", "import mtaopt"], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "MTA_BACKEND" in out.stderr
