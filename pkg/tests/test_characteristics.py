"""Characteristic flows, first integrals, series solutions and conjugation."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chronexp.characteristics import (BlowUpError, CharField, ClosedFormDomainError,
                                      GaugeSingularityError, TruncationBudgetError,
                                      bernoulli_closed_form, first_integrals, flow,
                                      flow_conjugation_coefficients, gauge_transform_solution,
                                      lie_series_solution, omega_linearized_solution,
                                      resolve_Z_newton, solve_nth_order, solve_ode_characteristic,
                                      solve_system_characteristic)


def random_field(rng, n):
    """Smooth bounded field in (t, c1..cn) built from sines and low powers."""
    names = [f"c{i + 1}" for i in range(n)]
    comps = []
    for _ in range(n):
        w = rng.uniform(-1, 1, n)
        lin = "+".join(f"({w[j]:.6f})*{names[j]}" for j in range(n))
        k = rng.uniform(-0.8, 0.8, 3)
        comps.append(f"{k[0]:.6f}*sin({lin}+t) + {k[1]:.6f}*cos({names[0]}*t) + {k[2]:.6f}*({lin})")
    return comps, names


# single equation

def test_linear_growth():
    r = solve_ode_characteristic("u", 0.7, 1.4, a=0.3)
    assert float(r.values) == pytest.approx(0.7 * np.exp(1.1), rel=1e-11)


def test_quadratic_separation_oracle():
    r = solve_ode_characteristic("u^2", 1.0, 0.5)
    assert abs(float(r.values) - 2.0) <= 1e-10
    assert r.residual <= 1e-6
    for c in (0.3, -0.5, 1.5):
        for t in (0.1, 0.4):
            got = float(solve_ode_characteristic("u^2", c, t).values)
            assert abs(got - c / (1 - c * t)) <= 1e-10 * max(1, abs(got))


def test_blowup_reports_escape_time():
    with pytest.raises(BlowUpError) as info:
        solve_ode_characteristic("u^2", 1.0, 1.0)
    assert info.value.escape_time == pytest.approx(1.0, abs=1e-6)


def test_batch_of_initial_values():
    r = solve_ode_characteristic("u^2", np.array([0.1, 0.2, 0.5]), 0.5)
    assert np.allclose(r.values, np.array([0.1, 0.2, 0.5]) / (1 - 0.5 * np.array([0.1, 0.2, 0.5])))


# systems and nth order

def test_oscillator_system():
    r = solve_system_characteristic(["c2", "-c1"], [0.4, -1.2], 2.0, a=0.5)
    s = 1.5
    assert np.allclose(r.values, [0.4 * np.cos(s) - 1.2 * np.sin(s), -0.4 * np.sin(s) - 1.2 * np.cos(s)],
                       atol=1e-11)


def test_frozen_and_decoupled_systems():
    c = np.array([0.3, -0.7])
    assert np.allclose(solve_system_characteristic(["0", "0"], c, 1.0).values, c)
    assert np.allclose(solve_system_characteristic(["c1", "c2"], c, 1.0).values, c * np.e, rtol=1e-11)


def test_nth_order_examples():
    r = solve_nth_order("0", 2, [1.0, 2.0], 1.5, a=0.5)
    assert np.allclose(r.values, [3.0, 2.0])
    r = solve_nth_order("-c1", 2, [1.0, 2.0], 1.0)
    assert float(r.u) == pytest.approx(np.cos(1) + 2 * np.sin(1), abs=1e-11)
    one = solve_nth_order("c1^2", 1, [0.5], 0.4)
    assert float(one.u) == pytest.approx(float(solve_ode_characteristic("u^2", 0.5, 0.4).values), abs=1e-13)


def test_energy_is_conserved_for_oscillator():
    ts = np.linspace(0.1, 3.0, 12)
    for t in ts:
        u, v = solve_nth_order("-c1", 2, [0.8, -0.3], t).values
        assert abs(u * u + v * v - (0.64 + 0.09)) <= 1e-8


def test_flow_semigroup_random_fields(rng):
    for n in (1, 2, 3):
        comps, names = random_field(rng, n)
        fld = CharField(comps, names)
        c = rng.uniform(-1, 1, n)
        direct = flow(fld, c, 0.0, 1.0)[0]
        mid = flow(fld, flow(fld, c, 0.0, 0.4)[0], 0.4, 1.0)[0]
        assert np.max(np.abs(direct - mid)) <= 1e-8


# first integrals

def test_first_integrals_linear_field():
    fis = first_integrals("u", 0.8, [[0.5], [-1.0]], a=0.2)
    s = 0.6
    assert np.allclose(fis.zeta[:, 0], np.array([0.5, -1.0]) * np.exp(-s), rtol=1e-11)
    assert np.allclose(fis.b[:, 0], np.array([0.5, -1.0]) * np.exp(-s), rtol=1e-11)
    assert fis.passed


def test_first_integrals_quadratic_field():
    fis = first_integrals("u^2", 0.5, [[0.3], [0.6]])
    c = np.array([0.3, 0.6])
    assert np.allclose(fis.zeta[:, 0], c / (1 + c * 0.5), rtol=1e-11)
    u = c / (1 - c * 0.5)
    assert np.allclose(fis.zeta_at(0.5, u[:, None])[:, 0], c, atol=1e-12)


def test_first_integrals_frozen_flow():
    pts = np.array([[0.1, 0.2], [1.0, -1.0]])
    fis = first_integrals(["0", "0"], 1.0, pts)
    assert np.allclose(fis.zeta, pts) and np.allclose(fis.Z(0.3), pts)


def test_first_integral_relations_random_fields(rng):
    for trial in range(20):
        n = 1 + trial % 3
        comps, names = random_field(rng, n)
        pts = rng.uniform(-1, 1, (3, n))
        fis = first_integrals(comps, 0.7, pts, names=names)
        assert fis.passed
        assert max(fis.checks.values()) <= 1e-8


def test_b_satisfies_reversed_equation():
    comps = ["sin(c1)+t", "c1*c2"]
    x = np.array([[0.3, 0.5]])
    b = lambda t: first_integrals(comps, t, x).b[0]
    t, h = 0.6, 1e-4
    db = (b(t + h) - b(t - h)) / (2 * h)
    bt = b(t)
    assert np.allclose(db, -np.array([np.sin(bt[0]) + t, bt[0] * bt[1]]), atol=1e-7)


def test_newton_resolver_agrees_with_flow():
    fis = first_integrals(["c2", "-sin(c1)"], 0.9, [[0.4, 0.1]])
    for tau in (0.0, 0.3, 0.9):
        assert np.allclose(resolve_Z_newton(fis, tau), fis.Z(tau), atol=1e-9)


# Lie series

def test_lie_series_exponential():
    r = lie_series_solution("u", [1.0], 1.0, 10)
    assert abs(float(np.ravel(r.values)[0]) - np.e) <= 1e-7


def test_lie_series_identity_at_start():
    r = lie_series_solution("u^2+sin(t)", [0.4], 0.0, 6)
    assert float(np.ravel(r.values)[0]) == 0.4


@pytest.mark.parametrize("N", [3, 6, 10])
def test_lie_series_truncation_slope(N):
    # c h stays small enough to be asymptotic while the N = 10 error
    # remains above double-precision round-off
    hs = [0.2, 0.1, 0.05]
    c = 1.0
    errs = [abs(float(np.ravel(lie_series_solution("u^2", [c], h, N).values)[0]) - c / (1 - c * h))
            for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - (N + 1)) <= 0.3


def test_lie_series_non_polynomial_field():
    r = lie_series_solution(["sin(c2)", "-c1+t"], [0.2, 0.1], 0.3, 7)
    ref = solve_system_characteristic(["sin(c2)", "-c1+t"], [0.2, 0.1], 0.3).values
    assert np.allclose(r.values, ref, atol=1e-7)
    assert r.backend != "polynomial"


# gauge transforms

def test_identity_gauge():
    assert gauge_transform_solution("u^2+t", "c", 0.4, 0.5) == pytest.approx(
        float(solve_ode_characteristic("u^2+t", 0.4, 0.5).values), abs=1e-12)


def test_gauge_that_solves_the_equation():
    assert gauge_transform_solution("u", "c*exp(t)", 0.5, 0.7) == pytest.approx(0.5 * np.exp(0.7), rel=1e-13)


def test_gauge_cross_check_quadratic():
    got = gauge_transform_solution("u^2", "c*exp(t)", 0.5, 0.5)
    assert abs(got - 0.5 / (1 - 0.25)) <= 1e-8


def test_random_gauges_agree(rng):
    for _ in range(10):
        k, m = rng.uniform(-1, 1, 2)
        z = f"c*exp({k:.5f}*t) + {m:.5f}*t*sin(t)"
        f = "u^2 - t*u"
        c, t = rng.uniform(-0.5, 0.5), rng.uniform(0.1, 0.6)
        direct = float(solve_ode_characteristic(f, c, t).values)
        assert gauge_transform_solution(f, z, c, t) == pytest.approx(direct, rel=1e-6, abs=1e-12)


def test_gauge_singularity():
    with pytest.raises(GaugeSingularityError):
        gauge_transform_solution("u", "c*(1-2*t)", 0.5, 1.0)


# omega linearization

def test_omega_linear_case_closes_exactly():
    r = omega_linearized_solution("u", 0.6, 0.5)
    assert r.value == pytest.approx(0.6 * np.exp(0.5), rel=1e-10)


def test_omega_quadratic_example():
    r = omega_linearized_solution("u^2", 0.2, 0.5, budget=30)
    assert abs(r.value - 0.2 / 0.9) <= 1e-6


def test_omega_budget_too_small():
    with pytest.raises(TruncationBudgetError):
        omega_linearized_solution("u^2", 0.2, 0.5, budget=1)


def test_omega_random_cubics(rng):
    for _ in range(8):
        k = rng.uniform(-1, 1, 4)
        f = f"{k[0]:.4f} + {k[1]:.4f}*u + {k[2]:.4f}*cos(t)*u^2 + {k[3]:.4f}*u^3"
        c, t = rng.uniform(-0.4, 0.4), rng.uniform(0.1, 0.5)
        r = omega_linearized_solution(f, c, t, budget=30)
        assert abs(r.value - float(solve_ode_characteristic(f, c, t).values)) <= 1e-6


# conjugation coefficients

def test_conjugation_scaling_field():
    r = flow_conjugation_coefficients(["x"], (0.2, 1.0), [[0.5], [2.0]])
    assert np.allclose(r.p[:, 0, 0], np.exp(0.8), rtol=1e-9)
    assert r.check_error <= 1e-6


def test_conjugation_frozen_and_translation():
    r = flow_conjugation_coefficients(["0", "0"], (0.0, 1.0), [[0.1, 0.2]])
    assert np.allclose(r.p[0], np.eye(2))
    r = flow_conjugation_coefficients(["1"], (0.0, 1.0), [[0.3]])
    assert np.allclose(r.p[0], 1.0)


@pytest.mark.parametrize("h", [["x1^2+sin(t)"], ["x2*x1", "cos(x1)-t*x2"]])
def test_conjugation_matches_three_factor(h):
    pts = [[0.3, -0.4][: len(h)], [0.6, 0.2][: len(h)]]
    r = flow_conjugation_coefficients(h, (0.0, 0.6), pts, test_functions=5)
    assert r.check_error <= 1e-6


# Bernoulli

def test_bernoulli_examples():
    assert bernoulli_closed_form("1", "0", 2, 1.0, 0.5) == pytest.approx(2.0, abs=1e-12)
    assert bernoulli_closed_form("0", "cos(t)", 3, 0.7, 1.2) == pytest.approx(0.7 * np.exp(np.sin(1.2)), rel=1e-12)
    closed = bernoulli_closed_form("1", "1", 2, 0.1, 1.0)
    assert closed == pytest.approx(float(solve_ode_characteristic("u^2+u", 0.1, 1.0).values), rel=1e-8)


def test_bernoulli_negative_base():
    with pytest.raises(ClosedFormDomainError):
        bernoulli_closed_form("1", "0", 1.5, -0.5, 0.3)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(1.5, 3.0), st.floats(0.1, 1.0))
def test_bernoulli_matches_flow(ka, kb, alpha, c):
    a, b, t = f"{ka}*(1+t)", f"{kb}*cos(t)", 0.4
    closed = bernoulli_closed_form(a, b, alpha, c, t)
    direct = float(solve_ode_characteristic(f"({a})*u^{alpha}+({b})*u", c, t).values)
    assert closed == pytest.approx(direct, rel=1e-8)
