"""Operator trees, both function backends, shifts and the pushforward check."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chronexp.expr import parse_expr
from chronexp.opalg import (Commutator, Compose, DegreeOverflowError, Grid, Identity,
                            MulByFunction, NonMonotoneError, NonPolynomialError, PartialDeriv,
                            PolySeries, Scale, ShiftSpec, Sum, VariableMismatchError, Zero,
                            apply_operator, conjugation_coefficient, is_derivative,
                            operator_from_json, operator_to_json, pushforward_check,
                            pushforward_report, shift_apply, shift_conjugation, shift_map,
                            vector_field)

X = ("x",)
XY = ("x", "y")


def poly(text, variables=X, degree=12):
    return PolySeries.from_expression(text, variables, degree)


def test_partial_derivative_is_exact():
    assert apply_operator(PartialDeriv("x"), poly("x^3")) == poly("3*x^2")


def test_composition_with_bound_parameter():
    op = Compose([MulByFunction(parse_expr("t")), PartialDeriv("x")])
    assert apply_operator(op, poly("x^2"), {"t": 2}) == poly("4*x")


def test_commutator_of_derivative_and_position_is_identity():
    op = Commutator(PartialDeriv("x"), MulByFunction(parse_expr("x")))
    f = poly("x^5 - 3*x^2 + 7/3")
    assert apply_operator(op, f) == f


def test_rational_coefficients_are_exact():
    f = poly("x/3")
    assert f.coeffs[(1,)] == Fraction(1, 3)


def test_variable_mismatch():
    with pytest.raises(VariableMismatchError):
        apply_operator(PartialDeriv("z"), poly("x^2"))


def test_degree_overflow_is_an_error():
    with pytest.raises(DegreeOverflowError):
        PolySeries.from_expression("x^13", X, 12, strict=True)


def test_non_polynomial_rejected():
    with pytest.raises(NonPolynomialError):
        PolySeries.from_expression("sin(x)", X, 12, strict=True)


def test_derivative_shape_flag():
    assert is_derivative(vector_field({"x": "x^2", "y": "1"}, "x*y"))
    assert is_derivative(PartialDeriv("x"))
    assert not is_derivative(Compose([PartialDeriv("x"), PartialDeriv("x")]))
    assert not is_derivative(Sum([MulByFunction(parse_expr("x")), MulByFunction(parse_expr("y"))]))


def test_json_round_trip():
    op = Sum([Scale(2.0, Compose([MulByFunction(parse_expr("x*y")), PartialDeriv("y")])),
              Commutator(PartialDeriv("x"), MulByFunction(parse_expr("x^2"))), Identity(), Zero()])
    again = operator_from_json(operator_to_json(op))
    f = poly("x^3*y + y^2 - 2", XY)
    assert apply_operator(again, f) == apply_operator(op, f)


def test_grid_derivative_fourth_order():
    errs = []
    for n in (41, 81):
        g = Grid.from_function("sin(2*x)", X, [(0, 1)], [n])
        d = apply_operator(PartialDeriv("x"), g)
        xs = g.axis("x")
        assert not d.valid[:2].any() and not d.valid[-2:].any()
        errs.append(np.max(np.abs(d.values - 2 * np.cos(2 * xs))[d.valid]))
    assert np.log2(errs[0] / errs[1]) >= 3.7


# random polynomials / operators for exact algebraic properties
_coef = st.integers(-3, 3)
_mono = st.tuples(st.integers(0, 3), st.integers(0, 3), _coef)


def _poly_from(terms):
    text = " + ".join(f"({c})*x^{i}*y^{j}" for i, j, c in terms) or "0"
    return poly(text, XY)


_polys = st.lists(_mono, min_size=1, max_size=5).map(_poly_from)
_fields = st.tuples(_polys, _polys).map(
    lambda ab: vector_field({"x": ab[0].to_string(), "y": ab[1].to_string()}))
_ops = st.one_of(
    _fields,
    st.sampled_from([PartialDeriv("x"), PartialDeriv("y")]),
    _polys.map(lambda p: MulByFunction(parse_expr(p.to_string()))),
)


def _truncating(p, degree=24):
    return p.with_degree(degree)


@given(_ops, _polys, _polys)
def test_linearity_exact(op, f, g):
    f, g = _truncating(f), _truncating(g)
    assert apply_operator(op, f + g) == apply_operator(op, f) + apply_operator(op, g)


@given(_fields, _fields, _fields, _polys)
def test_jacobi_identity_exact(A, B, C, f):
    f = _truncating(f, 40)
    total = (apply_operator(Commutator(A, Commutator(B, C)), f)
             + apply_operator(Commutator(B, Commutator(C, A)), f)
             + apply_operator(Commutator(C, Commutator(A, B)), f))
    assert total.is_zero()


@given(_ops, _ops, _polys)
def test_commutator_definition(A, B, f):
    f = _truncating(f, 40)
    lhs = apply_operator(Commutator(A, B), f)
    rhs = apply_operator(A, apply_operator(B, f)) - apply_operator(B, apply_operator(A, f))
    assert lhs == rhs


# shifts

def test_translation_examples():
    assert shift_apply(ShiftSpec("x", "a"), poly("x^2"), {"a": 3}) == poly("x^2 + 6*x + 9")
    f = poly("x^4 - x")
    assert shift_apply(ShiftSpec("x", "0"), f) == f


def test_exotic_scaling_shift_maps_x_to_x_squared():
    # exp{ln(2) x ln(x) d/dx}: the straightening coordinate is psi = ln(ln x)
    spec = ShiftSpec("x", "log(2)", "log(log(x))")
    xs = np.linspace(1.5, 3.0, 7)
    assert np.allclose(shift_map(spec, xs, window=(1.2, 10.0)), xs ** 2, rtol=1e-10)


def test_non_monotone_change_of_variable():
    with pytest.raises(NonMonotoneError):
        shift_map(ShiftSpec("x", "0.1", "x^2"), np.linspace(-1, 1, 9))


@given(st.fractions(-3, 3, max_denominator=7), st.fractions(-3, 3, max_denominator=7), _polys)
def test_shift_group_law_exact(alpha, beta, f):
    s = lambda v: ShiftSpec("x", "s")
    one = shift_apply(s(alpha), shift_apply(s(beta), f, {"s": beta}), {"s": alpha})
    both = shift_apply(s(alpha + beta), f, {"s": alpha + beta})
    assert one == both


def test_grid_shift_matches_translation():
    g = Grid.from_function("sin(x)", X, [(0, 3)], [121])
    out = shift_apply(ShiftSpec("x", "0.25"), g)
    xs = g.axis("x")
    ok = out.valid
    assert ok.sum() > 100
    assert np.max(np.abs(out.values[ok] - np.sin(xs[ok] + 0.25))) < 1e-8


# conjugation of x^beta d/dx by the flow of x^alpha d/dx

def _three_factor(alpha, beta, a, f, x, h=1e-4):
    """exp{a x^alpha d} x^beta d exp{-a x^alpha d} f by flow composition.

    exp{s x^alpha d/dx} f = f(phi_s(x)) with phi the flow of x^alpha.
    """
    from scipy.integrate import solve_ivp

    def flow(s, x0):
        if s == 0:
            return x0
        sol = solve_ivp(lambda _, y: y ** alpha, (0, s), [x0],
                        rtol=1e-13, atol=1e-14, method="DOP853")
        return sol.y[0, -1]

    def inner(y):  # (x^beta d/dx)(f o phi_{-a}) at y
        g = lambda z: f(flow(-a, z))
        return y ** beta * (g(y + h) - g(y - h)) / (2 * h)

    return inner(flow(a, x))


@pytest.mark.parametrize("alpha,beta,a", [(1.0, 1.0, 0.3), (2.0, 2.0, 0.2), (0.0, 2.0, 0.4),
                                          (0.5, 1.5, 0.3), (1.0, 2.0, -0.2), (2.0, 0.0, 0.1)])
def test_shift_conjugation_matches_three_factor_application(alpha, beta, a):
    op = shift_conjugation(alpha, beta, a)
    f = lambda z: np.sin(z) + z ** 2
    for x in (1.2, 1.6, 2.0):
        g = Grid.from_function("sin(x)+x^2", X, [(x - 0.02, x + 0.02)], [9])
        got = apply_operator(op, g)
        closed = got.values[4]
        direct = _three_factor(alpha, beta, a, f, x)
        assert closed == pytest.approx(direct, rel=1e-6, abs=1e-7)


def test_shift_conjugation_branches():
    xs = np.linspace(0.5, 2, 5)
    c11 = conjugation_coefficient(1, 1, "0.7").compile(("x",))
    assert np.allclose(c11(xs), xs)
    c22 = conjugation_coefficient(2, 2, "0.7").compile(("x",))
    assert np.allclose(c22(xs), xs ** 2)
    c02 = conjugation_coefficient(0, 2, "0.7").compile(("x",))
    assert np.allclose(c02(xs), (xs + 0.7) ** 2)


def test_shift_conjugation_continuous_as_beta_tends_to_alpha():
    alpha, beta, a = 2.0, 2.0 + 1e-4, 0.2
    # the general branch stays accurate next to the alpha = beta branch
    op = shift_conjugation(alpha, beta, a)
    for x in (1.0, 1.5, 2.0):
        g = Grid.from_function("sin(x)+x^2", X, [(x - 0.02, x + 0.02)], [9])
        closed = apply_operator(op, g).values[4]
        assert closed == pytest.approx(_three_factor(alpha, beta, a, lambda z: np.sin(z) + z ** 2, x),
                                       abs=1e-6)
    # and tends to it linearly in beta - alpha
    xs = np.linspace(1.0, 2.0, 11)
    at = conjugation_coefficient(alpha, alpha, a).compile(("x",))(xs)
    gaps = [np.max(np.abs(conjugation_coefficient(alpha, alpha + d, a).compile(("x",))(xs) - at))
            for d in (1e-4, 1e-5)]
    assert gaps[0] < 1e-3 and gaps[0] / gaps[1] == pytest.approx(10, rel=1e-2)


# chronological homomorphism

def test_pushforward_product_with_scaling_generator():
    b = [poly("x + 1"), poly("x^2 - 2*x")]
    assert pushforward_check(vector_field({"x": "x"}), "b1*b2", b, 4)


def test_pushforward_single_argument_trivial():
    assert pushforward_check(vector_field({"x": "x^2"}), "b1", [poly("x^3 + x")], 4)


def test_pushforward_non_derivative_counterexample():
    rep = pushforward_report(Compose([PartialDeriv("x"), PartialDeriv("x")]), "b1^2",
                             [poly("x")], 4)
    assert not rep.equal
    assert any(sum(e) <= 2 for e, _ in rep.mismatches)


def test_pushforward_random_polynomials_exact(rng):
    for trial in range(20):
        coeffs = rng.integers(-2, 3, size=(2, 3))
        gen = vector_field({"x": f"{coeffs[0, 0]}+{coeffs[0, 1]}*x+{coeffs[0, 2]}*y",
                            "y": f"{coeffs[1, 0]}+{coeffs[1, 1]}*x*y"})
        c = rng.integers(-3, 4, size=4)
        F = f"{c[0]}*b1*b2 + {c[1]}*b1^2 + {c[2]}*b2 + {c[3]}"
        b = [poly(f"x + {c[1]}*y", XY), poly(f"x*y - {c[2]}", XY)]
        assert pushforward_check(gen, F, b, 4)
