"""Linear operators as expression trees acting on function backends.

JSON shape (used by CLI configs)::

    {"kind": "mul", "expr": "t*x"}
    {"kind": "d", "var": "x"}
    {"kind": "sum", "terms": [op, ...]}
    {"kind": "compose", "factors": [op, ...]}      # rightmost applied first
    {"kind": "commutator", "lhs": op, "rhs": op}
    {"kind": "scale", "factor": 2.0, "child": op}
    {"kind": "identity"}
    {"kind": "zero"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Union

from ..expr import Expression, as_expression
from .grid import Grid
from .polyseries import PolySeries, to_fraction

__all__ = [
    "OperatorExpr",
    "MulByFunction",
    "PartialDeriv",
    "Sum",
    "Compose",
    "Commutator",
    "Scale",
    "Identity",
    "Zero",
    "VariableMismatchError",
    "apply_operator",
    "derivative_form",
    "is_derivative",
    "vector_field",
    "operator_from_json",
    "operator_to_json",
    "operator_variables",
]

FunctionRep = Union[PolySeries, Grid]


class VariableMismatchError(ValueError):
    """Operator refers to names the function does not carry or bind."""


class OperatorExpr:
    """Base class for operator tree nodes."""

    def __add__(self, other: "OperatorExpr") -> "OperatorExpr":
        return Sum((self, other))

    def __sub__(self, other: "OperatorExpr") -> "OperatorExpr":
        return Sum((self, Scale(-1.0, other)))

    def __matmul__(self, other: "OperatorExpr") -> "OperatorExpr":
        return Compose((self, other))

    def __rmul__(self, c) -> "OperatorExpr":
        return Scale(c, self)

    def to_json(self) -> dict:
        return operator_to_json(self)

    @property
    def is_derivative(self) -> bool:
        return is_derivative(self)


@dataclass(frozen=True)
class MulByFunction(OperatorExpr):
    expr: Expression

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expression(self.expr))


@dataclass(frozen=True)
class PartialDeriv(OperatorExpr):
    var: str


@dataclass(frozen=True)
class Sum(OperatorExpr):
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class Compose(OperatorExpr):
    """Product of operators; the rightmost factor acts first."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass(frozen=True)
class Commutator(OperatorExpr):
    lhs: OperatorExpr
    rhs: OperatorExpr


@dataclass(frozen=True)
class Scale(OperatorExpr):
    factor: object
    child: OperatorExpr


@dataclass(frozen=True)
class Identity(OperatorExpr):
    pass


@dataclass(frozen=True)
class Zero(OperatorExpr):
    pass


# ---------------------------------------------------------------------------
# application


def operator_variables(op: OperatorExpr) -> set[str]:
    """Names referenced by the operator (coefficients and derivatives)."""
    if isinstance(op, MulByFunction):
        return set(op.expr.variables)
    if isinstance(op, PartialDeriv):
        return {op.var}
    if isinstance(op, Sum):
        return set().union(*(operator_variables(t) for t in op.terms)) if op.terms else set()
    if isinstance(op, Compose):
        return set().union(*(operator_variables(t) for t in op.factors)) if op.factors else set()
    if isinstance(op, Commutator):
        return operator_variables(op.lhs) | operator_variables(op.rhs)
    if isinstance(op, Scale):
        return operator_variables(op.child)
    return set()


def apply_operator(op: OperatorExpr, f: FunctionRep,
                   bindings: Optional[Mapping[str, object]] = None) -> FunctionRep:
    """Apply ``op`` to a PolySeries (exactly) or a Grid (finite differences).

    ``bindings`` supplies values for coefficient names that are not
    variables of ``f`` (for example a time parameter).
    """
    bindings = dict(bindings or {})
    names = set(f.variables) | set(bindings)
    unknown = operator_variables(op) - names
    if unknown:
        raise VariableMismatchError(
            f"operator uses {sorted(unknown)} which the function neither carries nor binds"
        )
    return _apply(op, f, bindings)


def _apply(op, f, bindings):
    if isinstance(op, Identity):
        return f
    if isinstance(op, Zero):
        return f * 0
    if isinstance(op, PartialDeriv):
        return f.derivative(op.var)
    if isinstance(op, MulByFunction):
        if isinstance(f, PolySeries):
            g = PolySeries.from_expression(op.expr, f.variables, f.degree, bindings)
            return g * f
        return f.multiply_by(op.expr, bindings)
    if isinstance(op, Scale):
        inner = _apply(op.child, f, bindings)
        if isinstance(f, PolySeries):
            return inner.scale(to_fraction(op.factor))
        return inner * float(op.factor)
    if isinstance(op, Sum):
        if not op.terms:
            return f * 0
        out = _apply(op.terms[0], f, bindings)
        for term in op.terms[1:]:
            out = out + _apply(term, f, bindings)
        return out
    if isinstance(op, Compose):
        out = f
        for factor in reversed(op.factors):
            out = _apply(factor, out, bindings)
        return out
    if isinstance(op, Commutator):
        ab = _apply(op.lhs, _apply(op.rhs, f, bindings), bindings)
        ba = _apply(op.rhs, _apply(op.lhs, f, bindings), bindings)
        return ab - ba
    raise TypeError(f"unknown operator node {type(op).__name__}")


# ---------------------------------------------------------------------------
# derivative shape


def _term_form(op):
    """(var, coefficient Expression) for c * d/dvar shaped terms, else None."""
    if isinstance(op, PartialDeriv):
        return op.var, as_expression(1.0)
    if isinstance(op, Compose) and len(op.factors) == 2:
        m, d = op.factors
        if isinstance(m, MulByFunction) and isinstance(d, PartialDeriv):
            return d.var, m.expr
    if isinstance(op, Compose) and len(op.factors) == 1:
        return _term_form(op.factors[0])
    return None


def derivative_form(op: OperatorExpr):
    """Decompose a derivative-shaped operator.

    Returns ``(field, f0)`` where ``field`` maps variable names to
    coefficient Expressions and ``f0`` is the multiplication term (or
    ``None``).  Returns ``None`` when the tree is not a sum of
    coefficient-times-partial terms plus at most one multiplication.
    """
    terms = list(op.terms) if isinstance(op, Sum) else [op]
    field: dict[str, Expression] = {}
    f0 = None
    for term in terms:
        scale = 1.0
        while isinstance(term, Scale):
            scale *= float(term.factor)
            term = term.child
        if isinstance(term, (Zero,)):
            continue
        tf = _term_form(term)
        if tf is not None:
            var, coef = tf
            coef = coef if scale == 1.0 else as_expression(f"{scale!r}*({coef})")
            if var in field:
                field[var] = as_expression(f"({field[var]})+({coef})")
            else:
                field[var] = coef
            continue
        if isinstance(term, (MulByFunction, Identity)):
            if f0 is not None:
                return None
            expr = term.expr if isinstance(term, MulByFunction) else as_expression(1.0)
            f0 = expr if scale == 1.0 else as_expression(f"{scale!r}*({expr})")
            continue
        return None
    return field, f0


def is_derivative(op: OperatorExpr) -> bool:
    return derivative_form(op) is not None


def vector_field(coefficients: Mapping[str, object], f0=None) -> OperatorExpr:
    """``f0 + sum_i c_i d/dx_i`` as an operator tree."""
    terms = [Compose((MulByFunction(as_expression(c)), PartialDeriv(v)))
             for v, c in coefficients.items()]
    if f0 is not None:
        terms.append(MulByFunction(as_expression(f0)))
    return Sum(tuple(terms))


# ---------------------------------------------------------------------------
# JSON


def operator_to_json(op: OperatorExpr) -> dict:
    if isinstance(op, MulByFunction):
        return {"kind": "mul", "expr": str(op.expr)}
    if isinstance(op, PartialDeriv):
        return {"kind": "d", "var": op.var}
    if isinstance(op, Sum):
        return {"kind": "sum", "terms": [operator_to_json(t) for t in op.terms]}
    if isinstance(op, Compose):
        return {"kind": "compose", "factors": [operator_to_json(t) for t in op.factors]}
    if isinstance(op, Commutator):
        return {"kind": "commutator", "lhs": operator_to_json(op.lhs),
                "rhs": operator_to_json(op.rhs)}
    if isinstance(op, Scale):
        factor = op.factor
        if isinstance(factor, Fraction):
            factor = str(factor)
        return {"kind": "scale", "factor": factor, "child": operator_to_json(op.child)}
    if isinstance(op, Identity):
        return {"kind": "identity"}
    if isinstance(op, Zero):
        return {"kind": "zero"}
    raise TypeError(f"unknown operator node {type(op).__name__}")


def operator_from_json(data) -> OperatorExpr:
    if isinstance(data, str):
        data = json.loads(data)
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError("operator JSON must be an object with a 'kind' field")
    kind = data["kind"]
    if kind == "mul":
        return MulByFunction(as_expression(data["expr"]))
    if kind == "d":
        return PartialDeriv(str(data["var"]))
    if kind == "sum":
        return Sum(tuple(operator_from_json(t) for t in data["terms"]))
    if kind == "compose":
        return Compose(tuple(operator_from_json(t) for t in data["factors"]))
    if kind == "commutator":
        return Commutator(operator_from_json(data["lhs"]), operator_from_json(data["rhs"]))
    if kind == "scale":
        factor = data["factor"]
        if isinstance(factor, str):
            factor = Fraction(factor)
        return Scale(factor, operator_from_json(data["child"]))
    if kind == "identity":
        return Identity()
    if kind == "zero":
        return Zero()
    raise ValueError(f"unknown operator kind {kind!r}")
