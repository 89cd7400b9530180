"""Parser, evaluator and symbolic derivative."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chronexp.expr import (ArityError, BinOp, Call, Const, DomainError, ExprSyntaxError,
                           UnknownIdentifierError, Var, differentiate, eval_expr, parse_expr)


def test_parse_tree_shapes():
    e = parse_expr("t*u^2")
    assert e.root == BinOp("*", Var("t"), BinOp("^", Var("u"), Const(2.0, "2")))
    e = parse_expr("sin(x)+1")
    assert isinstance(e.root, BinOp) and e.root.op == "+"
    assert e.root.left == Call("sin", (Var("x"),))
    assert e.variables == ("x",)


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("u***2")
    assert info.value.offset == 3


@pytest.mark.parametrize("text", ["2u", "sin x", "(1+2", "1+", ")"])
def test_malformed_inputs_rejected(text):
    with pytest.raises(ExprSyntaxError):
        parse_expr(text)


def test_unknown_function_and_arity():
    with pytest.raises(UnknownIdentifierError):
        parse_expr("foo(x)")
    with pytest.raises(ArityError):
        parse_expr("sin(x, y)")


def test_power_is_right_associative():
    assert eval_expr("2^3^2") == 2.0 ** 9


def test_evaluation_examples():
    assert eval_expr("t*u^2", {"t": 2, "u": 3}) == 18
    assert eval_expr("exp(0)", {}) == 1


def test_domain_errors_carry_subexpression():
    with pytest.raises(DomainError) as info:
        eval_expr("log(x)", {"x": -1})
    assert info.value.subexpr == Call("log", (Var("x"),))
    with pytest.raises(DomainError):
        eval_expr("1/(x-1)", {"x": 1})


def test_derivative_examples():
    assert str(differentiate("t*u^2", "u")) == "2*t*u"
    assert str(differentiate("sin(x)", "x")) == "cos(x)"
    assert str(differentiate("u", "t")) == "0"


def test_round_trip_idempotent():
    for text in ["t*u^2", "-(x+1)^2/3", "sin(x)*exp(-t)", "2^3^2", "pow(x, 3)-sqrt(abs(y))",
                 "-x^2", "(-x)^2", "a-(b-c)", "a/(b*c)"]:
        e = parse_expr(text)
        again = parse_expr(str(e))
        assert again == e
        assert parse_expr(str(again)) == again


# random expressions for the derivative/finite-difference property
_leaf = st.sampled_from(["x", "y", "1.5", "0.7", "2"])


def _combine(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda t: f"({t[0]}){t[1]}({t[2]})")
    unary = st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(
        lambda t: f"{t[0]}(({t[1]})/4)")
    square = children.map(lambda c: f"({c})^2")
    return st.one_of(binary, unary, square)


_exprs = st.recursive(_leaf, _combine, max_leaves=6)


@given(_exprs, st.floats(-1, 1), st.floats(-1, 1))
def test_derivative_matches_central_difference(text, x, y):
    e = parse_expr(text)
    d = differentiate(e, "x")
    exact = eval_expr(d, {"x": x, "y": y})

    def fd(h):
        return (eval_expr(e, {"x": x + h, "y": y}) - eval_expr(e, {"x": x - h, "y": y})) / (2 * h)

    err = [abs(fd(h) - exact) for h in (1e-2, 5e-3)]
    scale = max(1.0, abs(exact))
    assert err[1] <= 1e-5 * scale
    if err[0] > 1e-9 * scale:
        assert math.log2(err[0] / err[1]) >= 1.9 or err[1] < 1e-10


def test_derivative_order_on_fixed_sample(rng):
    orders = []
    texts = ["sin(x)*exp(y*x)", "x^3*y-cos(x)", "exp(sin(x))", "log(x^2+1)*y", "sqrt(x^2+2)"]
    for text in texts:
        for _ in range(20):
            x, y = rng.uniform(-1, 1, 2)
            exact = eval_expr(differentiate(text, "x"), {"x": x, "y": y})
            errs = []
            for h in (4e-2, 2e-2):
                fd = (eval_expr(text, {"x": x + h, "y": y}) - eval_expr(text, {"x": x - h, "y": y})) / (2 * h)
                errs.append(abs(fd - exact))
            if errs[1] > 1e-12:
                orders.append(np.log2(errs[0] / errs[1]))
    assert np.median(orders) >= 1.9


def test_expression_free_of_variable_differentiates_to_zero():
    assert eval_expr(differentiate("sin(t)*3", "x"), {"t": 0.3}) == 0
