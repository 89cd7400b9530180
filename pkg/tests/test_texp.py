"""Ordered exponentials, Dyson sums and the linear solvers."""

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp
from scipy.linalg import expm as scipy_expm

from chronexp.identities import random_generator, trial_rng
from chronexp.texp import (CallableMatrixFunction, ConstantMatrixFunction, ExprMatrixFunction,
                           PiecewiseConstantMatrixFunction, QuadratureBudgetError,
                           RefinementBudgetError, StepControl, dyson_partial_sum, expm,
                           ordered_exp, parameter_derivative, product_integral,
                           solve_linear_inhomogeneous, solve_operator_sylvester)

E12 = np.array([[0.0, 1.0], [0.0, 0.0]])
E21 = E12.T


def gen3(seed, interval=(0.0, 1.5)):
    return random_generator(trial_rng(seed, "texp-tests"), 3, interval)


def test_expm_matches_scipy(rng):
    for _ in range(20):
        A = rng.normal(size=(4, 4)) * rng.uniform(0.1, 8)
        assert np.allclose(expm(A), scipy_expm(A), rtol=1e-12, atol=1e-12 * np.abs(scipy_expm(A)).max())


def test_constant_generator(rng):
    L = rng.normal(size=(3, 3))
    E = ordered_exp(ConstantMatrixFunction(L), 0.2, 1.1)
    assert np.allclose(E, scipy_expm(0.9 * L), rtol=1e-10, atol=1e-12)


def test_commuting_family():
    L0 = np.array([[0.3, 1.0], [-1.0, 0.1]])
    gen = ExprMatrixFunction([[f"cos(t)*{L0[i, j]}" for j in range(2)] for i in range(2)])
    E = ordered_exp(gen, 0.0, 1.3)
    assert np.allclose(E, scipy_expm(np.sin(1.3) * L0), rtol=1e-10)


def test_piecewise_constant_ordering():
    gen = PiecewiseConstantMatrixFunction([0.0, 1.0, 2.0], [E12, E21])
    E = ordered_exp(gen, 0.0, 2.0, "T")
    assert np.allclose(E, [[1, 1], [1, 2]], atol=1e-12)
    E0 = ordered_exp(gen, 0.0, 2.0, "T0")
    assert np.allclose(E0, scipy_expm(E12) @ scipy_expm(E21), atol=1e-12)


def test_identity_at_start():
    assert np.array_equal(ordered_exp(gen3(1), 0.4, 0.4), np.eye(3))


def test_defining_equations_by_finite_difference():
    L = gen3(2)
    t, h = 0.9, 1e-4
    for direction in ("T", "T0"):
        E = lambda s: ordered_exp(L, 0.0, s, direction, tol=1e-12)
        dE = (E(t + h) - E(t - h)) / (2 * h)
        if direction == "T":
            target = L(t) @ E(t)
        else:
            target = E(t) @ L(t)
        assert np.allclose(dE, target, atol=1e-6)
    # inverse derivative form for T0: d(E^-1)/dt = -L E^-1 is the T0 exponential of -L
    Einv = lambda s: ordered_exp(L, 0.0, s, "T", -1.0, tol=1e-12)
    F = lambda s: ordered_exp(L, 0.0, s, "T0", 1.0, tol=1e-12)
    assert np.allclose(Einv(t) @ F(t), np.eye(3), atol=1e-9)


def test_group_law_and_inverse(rng):
    for k in range(10):
        L = gen3(10 + k)
        a, b, t = np.sort(rng.uniform(0, 1.5, 3))
        Eta = ordered_exp(L, a, t)
        assert np.linalg.norm(Eta - ordered_exp(L, b, t) @ ordered_exp(L, a, b)) <= 5e-9
        F = ordered_exp(L, a, t, "T0", -1.0)
        assert np.linalg.norm(F @ Eta - np.eye(3)) <= 5e-9
        assert np.linalg.norm(Eta @ F - np.eye(3)) <= 5e-9
        G = ordered_exp(L, a, t, "T0")
        assert np.linalg.norm(G - ordered_exp(L, a, b, "T0") @ ordered_exp(L, b, t, "T0")) <= 5e-9


def test_reversed_interval_is_backward_solution():
    L = gen3(3)
    fwd = ordered_exp(L, 0.2, 1.0)
    back = ordered_exp(L, 1.0, 0.2)
    assert np.allclose(back @ fwd, np.eye(3), atol=1e-9)


def test_product_integral_second_order():
    L = gen3(4)
    ref = ordered_exp(L, 0.0, 1.0, tol=1e-13)
    errs = [np.linalg.norm(product_integral(L, 0.0, 1.0, n) - ref) for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_refinement_budget():
    fast = ExprMatrixFunction([["40*sin(900*t)", "1"], ["-1", "0"]])
    with pytest.raises(RefinementBudgetError):
        ordered_exp(fast, 0.0, 1.0, tol=1e-14, control=StepControl(max_levels=3))


def test_non_finite_generator_sample():
    bad = CallableMatrixFunction(
        lambda t: np.array([[np.inf if t > 0.5 else 1.0, 0.0], [0.0, 0.0]]), 2)
    with pytest.raises((ArithmeticError, ValueError)):
        ordered_exp(bad, 0.0, 1.0)


def test_dyson_small_orders():
    L = ConstantMatrixFunction(np.array([[0.1, 0.4], [-0.3, 0.2]]))
    assert np.array_equal(dyson_partial_sum(L, 0.0, 0.7, 0), np.eye(2))
    assert np.allclose(dyson_partial_sum(L, 0.0, 0.7, 1), np.eye(2) + 0.7 * L(0.0), atol=1e-14)


def test_dyson_budget():
    with pytest.raises(QuadratureBudgetError):
        dyson_partial_sum(gen3(5), 0.0, 1.0, 8, quad_points=16)


@pytest.mark.parametrize("direction", ["T", "T0"])
def test_dyson_order_four_slope(direction):
    L = random_generator(trial_rng(42, "dyson-convergence"), 3, (0.0, 1.0))
    hs = [0.2 / 2 ** i for i in range(5)]
    errs = [np.linalg.norm(dyson_partial_sum(L, 0.0, h, 4, direction=direction)
                           - ordered_exp(L, 0.0, h, direction, tol=1e-13)) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - 5) <= 0.25


def test_inhomogeneous_examples(rng):
    v = np.array([1.0, -2.0])
    zero = ConstantMatrixFunction(np.zeros((2, 2)))
    assert np.allclose(solve_linear_inhomogeneous(zero, ["3", "-1"], v, 0.5, 1.5), v + [3, -1])
    L = gen3(7, (0, 1))
    w = np.array([0.5, 1.0, -1.0])
    assert np.allclose(solve_linear_inhomogeneous(L, None, w, 0.0, 1.0), ordered_exp(L, 0.0, 1.0) @ w,
                       atol=1e-10)
    M = np.array([[0.2, 1.0], [-1.0, -0.1]])
    phi = np.array([1.0, 0.5])
    t = 1.2
    exact = scipy_expm(t * M) @ v + np.linalg.solve(M, (scipy_expm(t * M) - np.eye(2)) @ phi)
    got = solve_linear_inhomogeneous(ConstantMatrixFunction(M), ["1", "0.5"], v, 0.0, t)
    assert np.allclose(got, exact, rtol=1e-9)


def test_inhomogeneous_residual():
    L = ExprMatrixFunction([["sin(t)", "1"], ["-1", "t"]])
    phi = ["cos(t)", "t^2"]
    v = np.array([1.0, 0.0])
    u = lambda s: solve_linear_inhomogeneous(L, phi, v, 0.0, s)
    t, h = 0.8, 1e-4
    du = (u(t + h) - u(t - h)) / (2 * h)
    assert np.allclose(du, L(t) @ u(t) + [np.cos(t), t ** 2], atol=1e-6)


def test_sylvester_examples(rng):
    A, C, K0 = rng.normal(size=(3, 2, 2))
    zero = ConstantMatrixFunction(np.zeros((2, 2)))
    got = solve_operator_sylvester(ConstantMatrixFunction(A), zero, ConstantMatrixFunction(C), K0, 0.0, 0.9)
    assert np.allclose(got, scipy_expm(0.9 * A) @ K0 @ scipy_expm(0.9 * C), rtol=1e-9)
    b = ExprMatrixFunction([["t", "1"], ["cos(t)", "0"]])
    got = solve_operator_sylvester(zero, b, zero, K0, 0.0, 1.0)
    assert np.allclose(got, K0 + [[0.5, 1.0], [np.sin(1.0), 0.0]], atol=1e-10)


def test_parameter_derivative_examples():
    M = np.array([[0.1, 0.7], [-0.4, 0.2]])
    fam = ExprMatrixFunction([[f"alpha*{M[i, j]}" for j in range(2)] for i in range(2)],
                             params={"alpha": 0.0})
    got = parameter_derivative(fam, 0.0, 1.3, 0.8)
    assert np.allclose(got, 1.3 * M @ scipy_expm(1.3 * 0.8 * M), rtol=1e-9)
    flat = ExprMatrixFunction([["t", "1"], ["0", "sin(t)"]], params={"alpha": 0.0})
    assert np.allclose(parameter_derivative(flat, 0.0, 1.0, 0.3), 0.0, atol=1e-14)
