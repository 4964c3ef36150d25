import json
import math

import numpy as np
import pytest

from mtaopt.linalg import cholesky
from mtaopt.problem import (InfeasibleStart, ProblemInstance, generate_benchmark,
                            generate_convex_benchmark, instance_from_dict,
                            instance_to_dict, dumps_json, load_instance,
                            max_violation, save_instance, taylor_data,
                            taylor_value)

from helpers import charpoly_eigs, taylor_poly


def test_benchmark_objective_at_origin():
    inst = generate_benchmark(6, 3, seed=11)
    d0 = inst.data["d"][0]
    val, _, _ = inst.evaluate(0, np.zeros(6), order=0)
    assert val == pytest.approx(math.log(2.0) + d0, abs=1e-15)


def test_constraints_at_origin_have_exact_margin():
    for seed in (1, 5, 9):
        inst = generate_benchmark(4, 6, seed=seed)
        vals = inst.values(np.zeros(4))
        np.testing.assert_allclose(vals[1:], -0.1, atol=1e-12)
        assert max_violation(inst, np.zeros(4)) == 0.0


def test_seeded_generation_is_bit_identical():
    a = generate_benchmark(10, 10, seed=42)
    b = generate_benchmark(10, 10, seed=42)
    for key in ("a", "b", "c", "d", "Q"):
        np.testing.assert_array_equal(a.data[key], b.data[key])
    np.testing.assert_array_equal(a.lip_grad, b.lip_grad)
    c = generate_convex_benchmark(5, 3, seed=9, sigma=0.5)
    d = generate_convex_benchmark(5, 3, seed=9, sigma=0.5)
    np.testing.assert_array_equal(c.data["Q"], d.data["Q"])


@pytest.mark.parametrize("n", [2, 3, 5])
def test_benchmark_quadratics_indefinite(n):
    inst = generate_benchmark(n, 3, seed=3)
    for q in inst.data["Q"]:
        eigs = charpoly_eigs(q)
        assert eigs[0] < 0 < eigs[-1]


def test_gradients_match_finite_differences():
    for inst in (generate_benchmark(6, 4, seed=2),
                 generate_convex_benchmark(6, 4, seed=2, sigma=1.0)):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.uniform(-1, 1, inst.n)
            h = 1e-5 * (1.0 + np.linalg.norm(x))
            g = inst.gradients(x)
            fd = np.empty_like(g)
            for t in range(inst.n):
                e = np.zeros(inst.n)
                e[t] = h
                fd[:, t] = (inst.values(x + e) - inst.values(x - e)) / (2 * h)
            err = np.linalg.norm(fd - g, axis=1)
            assert np.all(err <= 1e-5 * (1.0 + np.linalg.norm(g, axis=1)))


def test_hessians_match_finite_differences():
    inst = generate_benchmark(5, 3, seed=8)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(-1, 1, inst.n)
        h = 1e-5 * (1.0 + np.linalg.norm(x))
        for i in range(inst.m + 1):
            _, _, hess = inst.evaluate(i, x, order=2)
            fd = np.empty_like(hess)
            for t in range(inst.n):
                e = np.zeros(inst.n)
                e[t] = h
                _, gp, _ = inst.evaluate(i, x + e, order=1)
                _, gm, _ = inst.evaluate(i, x - e, order=1)
                fd[:, t] = (gp - gm) / (2 * h)
            fd = 0.5 * (fd + fd.T)
            err = np.linalg.norm(fd - hess, "fro")
            assert err <= 1e-4 * (1.0 + np.linalg.norm(hess, "fro"))


@pytest.mark.parametrize("q", [1, 2])
def test_taylor_remainder_within_declared_lipschitz(q):
    inst = generate_benchmark(5, 4, seed=13)
    lip = inst.lip_grad if q == 1 else inst.lip_hess
    rng = np.random.default_rng(5)
    fact = math.factorial(q + 1)
    for _ in range(100):
        x = rng.uniform(-1.5, 1.5, inst.n)
        step = rng.uniform(-1, 1, inst.n)
        step *= rng.uniform(0, 1) / max(np.linalg.norm(step), 1e-12)
        y = x + step
        for i in range(inst.m + 1):
            lhs = abs(inst.values(y)[i] - taylor_poly(inst, i, x, q, y))
            rhs = lip[i] * np.linalg.norm(y - x) ** (q + 1) / fact
            assert lhs <= rhs + 1e-12


def test_convex_family_hessians_psd():
    inst = generate_convex_benchmark(2, 1, seed=7, sigma=0.0)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform(-2, 2, inst.n)
        for i in range(inst.m + 1):
            _, _, hess = inst.evaluate(i, x, order=2)
            cholesky(0.5 * (hess + hess.T) + 1e-10 * np.eye(inst.n))


def test_strongly_convex_objective_curvature():
    inst = generate_convex_benchmark(4, 2, seed=3, sigma=1.0)
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.uniform(-2, 2, inst.n)
        _, _, hess = inst.evaluate(0, x, order=2)
        assert charpoly_eigs(hess)[0] >= 1.0 - 1e-8


def test_taylor_value_center_and_exactness():
    inst = generate_benchmark(4, 2, seed=21)
    x = np.array([0.3, -0.2, 0.1, 0.0])
    td = taylor_data(inst, x, p=2, q=2)
    for i in range(inst.m + 1):
        assert taylor_value(td, i, 2, x) == pytest.approx(inst.values(x)[i], rel=1e-14)

    # linear objective reproduced exactly at any order
    a = np.array([1.5, -2.0])

    def lin_oracle(i, x_, order):
        grad = a.copy() if order >= 1 else None
        hess = np.zeros((2, 2)) if order >= 2 else None
        return float(a @ x_), grad, hess

    lin = ProblemInstance(n=2, m=0, lip_grad=np.array([1e-9]),
                          lip_hess=np.array([1e-9]), x0=np.zeros(2),
                          oracle=lin_oracle, check_oracles=False)
    td = taylor_data(lin, np.array([0.7, 0.1]), p=2, q=1)
    y = np.array([-3.0, 2.0])
    assert taylor_value(td, 0, 2, y) == pytest.approx(float(a @ y), abs=1e-14)


def test_taylor_value_quadratic_exact():
    def quad_oracle(i, x, order):
        grad = x.copy() if order >= 1 else None
        hess = np.eye(2) if order >= 2 else None
        return 0.5 * float(x @ x), grad, hess

    inst = ProblemInstance(n=2, m=0, lip_grad=np.array([2.0]),
                           lip_hess=np.array([1e-9]), x0=np.zeros(2),
                           oracle=quad_oracle, check_oracles=False)
    td = taylor_data(inst, np.zeros(2), p=2, q=1)
    assert taylor_value(td, 0, 2, np.ones(2)) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        # order-1 Taylor data carries no Hessian for a p=1 build
        td1 = taylor_data(inst, np.zeros(2), p=1, q=1)
        taylor_value(td1, 0, 2, np.ones(2))


def test_max_violation_single_constraint():
    def oracle(i, x, order):
        if i == 0:
            return float(x[0] ** 2), (np.array([2 * x[0]]) if order >= 1 else None), \
                (np.array([[2.0]]) if order >= 2 else None)
        return float(x[0] - 1.0), (np.array([1.0]) if order >= 1 else None), \
            (np.array([[0.0]]) if order >= 2 else None)

    inst = ProblemInstance(n=1, m=1, lip_grad=np.array([2.0, 1e-9]),
                           lip_hess=np.array([1e-9, 1e-9]), x0=np.zeros(1),
                           oracle=oracle, check_oracles=False)
    assert max_violation(inst, np.array([3.0])) == pytest.approx(2.0)
    assert max_violation(inst, inst.x0) == 0.0


def test_infeasible_start_rejected():
    def oracle(i, x, order):
        val = float(x[0]) if i == 0 else 1.0 + float(x[0])
        grad = np.array([1.0]) if order >= 1 else None
        return val, grad, (np.array([[0.0]]) if order >= 2 else None)

    with pytest.raises(InfeasibleStart):
        ProblemInstance(n=1, m=1, lip_grad=np.array([1e-9, 1e-9]),
                        lip_hess=np.array([1e-9, 1e-9]), x0=np.zeros(1),
                        oracle=oracle, check_oracles=False)


def test_oracle_self_check_catches_wrong_gradient():
    def bad_oracle(i, x, order):
        grad = np.array([2.0]) if order >= 1 else None   # true gradient is 1
        return float(x[0]), grad, (np.array([[0.0]]) if order >= 2 else None)

    with pytest.raises(RuntimeError):
        ProblemInstance(n=1, m=0, lip_grad=np.array([1.0]),
                        lip_hess=np.array([1.0]), x0=np.zeros(1),
                        oracle=bad_oracle, check_oracles=True)


def test_json_round_trip_bit_exact(tmp_path):
    for inst in (generate_benchmark(5, 4, seed=17),
                 generate_convex_benchmark(3, 2, seed=4, sigma=2.0)):
        path = tmp_path / "inst.json"
        save_instance(inst, path)
        back = load_instance(path)
        for key in ("a", "b", "c", "d", "Q"):
            np.testing.assert_array_equal(back.data[key], inst.data[key])
        np.testing.assert_array_equal(back.lip_grad, inst.lip_grad)
        np.testing.assert_array_equal(back.lip_hess, inst.lip_hess)
        np.testing.assert_array_equal(back.x0, inst.x0)
        # a second serialization must produce identical bytes
        assert dumps_json(instance_to_dict(back)) == dumps_json(instance_to_dict(inst))


def test_json_parses_with_stdlib():
    inst = generate_benchmark(3, 2, seed=1)
    doc = json.loads(dumps_json(instance_to_dict(inst)))
    rebuilt = instance_from_dict(doc)
    np.testing.assert_array_equal(rebuilt.data["Q"], inst.data["Q"])


def test_evaluate_returns_requested_orders():
    inst = generate_benchmark(3, 1, seed=2)
    x = np.zeros(3)
    val, grad, hess = inst.evaluate(1, x, order=0)
    assert grad is None and hess is None
    val, grad, hess = inst.evaluate(1, x, order=1)
    assert grad is not None and hess is None
    val, grad, hess = inst.evaluate(1, x, order=2)
    assert hess is not None and np.array_equal(hess, hess.T)
    with pytest.raises(IndexError):
        inst.evaluate(5, x)
