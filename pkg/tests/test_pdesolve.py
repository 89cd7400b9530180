"""Linear PDE examples: first-order transport, parabolic modes, Helmholtz
marching and compatible systems."""

import numpy as np
import pytest
from scipy.linalg import expm

from chronexp.pdesolve import (CompatibleB, FirstOrderPDEProblem, HelmholtzProblem,
                               InconsistentSystemError, MatrixField2D, PDESystemProblem,
                               TransverseGrid, check_consistency, construct_compatible_B,
                               discrete_symbol, first_order_pde_residual, helmholtz_residual,
                               observed_order, parabolic_grid_crosscheck, parabolic_mode_factor,
                               pde_system_residual, periodic_second_difference,
                               solve_first_order_pde, solve_helmholtz_march, solve_pde_system)

E12 = np.array([[0.0, 1.0], [0.0, 0.0]])
E21 = E12.T
C = np.array([[0.3, 1.0], [-0.5, 0.2]])


def halving_order(fn, h0, levels=3):
    hs = [h0 / 2 ** i for i in range(levels)]
    return observed_order(hs, [fn(h) for h in hs])


# first-order PDE

def test_constant_advection():
    p = FirstOrderPDEProblem(f=["1"], v="x^2", a=0.5)
    assert solve_first_order_pde(p, 1.5, [0.3]) == pytest.approx((0.3 + 1.0) ** 2, abs=1e-11)


def test_scaling_characteristics():
    p = FirstOrderPDEProblem(f=["x"], v="x")
    assert solve_first_order_pde(p, 0.8, [0.4]) == pytest.approx(0.4 * np.exp(0.8), rel=1e-11)


def test_pointwise_growth():
    p = FirstOrderPDEProblem(f=["0", "0"], f0=1, v="sin(x1)+x2")
    rho = [0.2, 0.7]
    assert solve_first_order_pde(p, 1.0, rho) == pytest.approx((np.sin(0.2) + 0.7) * np.e, rel=1e-11)


def test_initial_condition_reproduced():
    p = FirstOrderPDEProblem(f=["x*t", "sin(y)"], f0="t*x", phi="y", v="cos(x)*y", names=["x", "y"])
    assert solve_first_order_pde(p, 0.0, [0.3, 0.4]) == pytest.approx(np.cos(0.3) * 0.4, abs=1e-10)


def test_first_order_pde_residual_second_order():
    p = FirstOrderPDEProblem(f=["x*t", "sin(y)"], f0="t*x", phi="y+t", v="cos(x)*y",
                             names=["x", "y"])
    order = halving_order(lambda h: first_order_pde_residual(p, 0.6, [0.3, 0.4], h), 0.05)
    assert order >= 1.8


# parabolic

def test_mode_factor_examples():
    assert parabolic_mode_factor(0, [1], [1], 1) == pytest.approx(np.exp(-1))
    assert parabolic_mode_factor(0.3, [1, 2], [2, 1], 0) == 1
    assert parabolic_mode_factor(0, [1, 2], [0, 0], 5.0) == 1


def test_second_difference_symbol():
    N = 16
    D = periodic_second_difference(N)
    h = 2 * np.pi / N
    x = h * np.arange(N)
    assert np.allclose(D @ np.cos(3 * x), discrete_symbol(3, h) * np.cos(3 * x))


def test_grid_crosscheck_examples():
    assert parabolic_grid_crosscheck(1.0, 32, 0.1, tol=1e-8, modes=[1]) <= 1e-8
    assert parabolic_grid_crosscheck(1.0, 32, 0.0) == 0.0
    assert parabolic_grid_crosscheck(1.0, 32, 0.5) <= 1e-6


def test_grid_crosscheck_raises_above_tolerance():
    with pytest.raises(ArithmeticError):
        parabolic_grid_crosscheck(1.0, 32, 0.5, tol=1e-30)


def test_discrete_symbol_converges_second_order():
    m = 3
    gaps = [abs(discrete_symbol(m, 2 * np.pi / N) + m * m) for N in (32, 64, 128)]
    assert observed_order([1 / 32, 1 / 64, 1 / 128], gaps) == pytest.approx(2.0, abs=0.05)


# Helmholtz

def test_helmholtz_cosine_oracle():
    p = HelmholtzProblem(eps=1, alpha=1, beta=0, a=0.3)
    for x in (0.3, 1.0, 2.5):
        s = solve_helmholtz_march(p, x)
        assert abs(s.u[0] - np.cos(x - 0.3)) <= 1e-6
        assert abs(s.ux[0] + np.sin(x - 0.3)) <= 1e-6


def test_helmholtz_sine_oracle_with_wave_number():
    p = HelmholtzProblem(eps=4, alpha=0, beta=1)
    s = solve_helmholtz_march(p, 1.3)
    assert s.u[0] == pytest.approx(np.sin(2 * 1.3) / 2, abs=1e-10)


def test_helmholtz_source_oracle():
    p = HelmholtzProblem(eps=1, q=1, alpha=1, beta=0)
    # u'' + u = 1 with u(0) = 1, u'(0) = 0 has u = 1
    for x in (0.5, 2.0):
        assert solve_helmholtz_march(p, x).u[0] == pytest.approx(1.0, abs=1e-8)
    p = HelmholtzProblem(eps=1, q=1, alpha=0, beta=0)
    assert solve_helmholtz_march(p, 1.2).u[0] == pytest.approx(1 - np.cos(1.2), abs=1e-8)


def test_helmholtz_boundary_reproduction():
    tr = TransverseGrid(0.0, 1.0, 15)
    p = HelmholtzProblem(eps="2+x*y", alpha="sin(pi*y)", beta="y*(1-y)", transverse=tr, a=0.2)
    s = solve_helmholtz_march(p, 0.2)
    assert np.array_equal(s.u, np.sin(np.pi * tr.nodes))
    assert np.allclose(s.ux, tr.nodes * (1 - tr.nodes))


def test_helmholtz_residual_orders():
    p1 = HelmholtzProblem(eps="1+x^2/4", q="sin(x)", alpha=1, beta=0.5)
    assert halving_order(lambda h: helmholtz_residual(p1, 1.1, h), 0.05) >= 1.8
    p2 = HelmholtzProblem(eps="30+x", q="y", alpha="sin(pi*y)", beta=0,
                          transverse=TransverseGrid(0.0, 1.0, 15))
    assert halving_order(lambda h: helmholtz_residual(p2, 0.6, h), 0.05) >= 1.8


def test_helmholtz_wronskian_constant():
    eps = "2+sin(x)"
    u1 = lambda x: solve_helmholtz_march(HelmholtzProblem(eps=eps, alpha=1, beta=0), x)
    u2 = lambda x: solve_helmholtz_march(HelmholtzProblem(eps=eps, alpha=0, beta=1), x)
    for x in (0.5, 1.5, 3.0):
        a, b = u1(x), u2(x)
        assert a.u[0] * b.ux[0] - b.u[0] * a.ux[0] == pytest.approx(1.0, abs=1e-8)


# compatible systems

def test_consistency_examples():
    ok = PDESystemProblem(MatrixField2D([[f"y*{v}" for v in r] for r in C]),
                          MatrixField2D([[f"x*{v}" for v in r] for r in C]))
    assert check_consistency(ok, np.linspace(0, 1, 5), np.linspace(0, 1, 5)).max_residual <= 1e-12
    bad = PDESystemProblem(E12, E21)
    rep = check_consistency(bad, np.linspace(0, 1, 5), np.linspace(0, 1, 5))
    assert rep.max_residual == pytest.approx(np.sqrt(2), rel=1e-12)
    assert not rep.consistent
    same = MatrixField2D([["x*y", "x"], ["y", "0"]])
    rep = check_consistency(PDESystemProblem(same, same), [0.5], [0.5])
    # [A, A] = 0 leaves |dA/dy - dA/dx| = |[[x - y, 1], [-1, 0]]| at the sample
    assert rep.max_residual == pytest.approx(np.sqrt(2), rel=1e-9)


def test_inconsistent_pair_refused():
    p = PDESystemProblem(E12, E21, c=[1.0, 1.0])
    with pytest.raises(InconsistentSystemError) as info:
        solve_pde_system(p, 0.5, 0.5)
    assert info.value.report.max_residual == pytest.approx(np.sqrt(2))


def test_commuting_constant_pair():
    A = np.array([[0.2, 0.0], [0.0, -0.4]])
    B = np.array([[1.0, 0.0], [0.0, 0.5]])
    c = np.array([1.0, 2.0])
    got = solve_pde_system(PDESystemProblem(A, B, 0.1, 0.2, c), 0.7, 0.9)
    assert np.allclose(got, expm(0.6 * A) @ expm(0.7 * B) @ c, rtol=1e-11)


def test_symmetric_construction_pair():
    A = MatrixField2D([[f"y*{v}" for v in r] for r in C])
    B = MatrixField2D([[f"x*{v}" for v in r] for r in C])
    a, b, c = 0.2, -0.1, np.array([1.0, -1.0])
    p = PDESystemProblem(A, B, a, b, c)
    x, y = 0.8, 0.6
    oracle = expm((x * y - a * y) * C) @ expm((y - b) * a * C) @ c
    assert np.allclose(solve_pde_system(p, x, y), oracle, rtol=1e-10)
    res = [pde_system_residual(p, x, y, h) for h in (0.02, 0.01, 0.005)]
    for key in ("x_equation", "y_equation", "mixed_symmetry"):
        assert observed_order([0.02, 0.01, 0.005], [r[key] for r in res]) >= 1.8


def test_compatible_B_examples():
    A0 = np.array([[0.1, 0.5], [-0.3, 0.0]])
    B0 = np.array([[0.0, 1.0], [2.0, -1.0]])
    got = construct_compatible_B(A0, B0, 0.9, 0.4, a=0.2)
    assert np.allclose(got, expm(0.7 * A0) @ B0 @ expm(-0.7 * A0), rtol=1e-10)
    zero = np.zeros((2, 2))
    assert np.allclose(construct_compatible_B(zero, B0, 0.9, 0.4), B0)
    assert np.allclose(construct_compatible_B(A0, zero, 0.9, 0.4), 0.0)


def test_compatible_B_passes_consistency_and_solves():
    A = MatrixField2D([["y", "1"], ["0", "x*y"]])
    B = CompatibleB(A, MatrixField2D([["0", "1"], ["1", "0"]]), a=0.0)
    p = PDESystemProblem(A, B, 0.0, 0.0, [1.0, 0.5])
    rep = check_consistency(p, np.linspace(0.0, 0.6, 5), np.linspace(-0.3, 0.3, 5))
    assert rep.max_residual <= 1e-6
    res = [pde_system_residual(p, 0.4, 0.2, h)["y_equation"] for h in (0.02, 0.01, 0.005)]
    assert observed_order([0.02, 0.01, 0.005], res) >= 1.8
