"""Exact check that a chronological exponential pushes through a polynomial.

For a derivative operator ``D(t)`` the map ``E = T exp{int_0^t D}`` is a
ring homomorphism, ``E F(b_1, .., b_n) = F(E b_1, .., E b_n)``.  Both sides
are computed on the rational PolySeries backend with ``t`` carried as an
extra formal variable: ``E g`` is the Picard iterate of ``u = g + int D u``,
exact through ``t``-degree ``K`` after ``K`` sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from ..expr import as_expression
from .operators import (Commutator, Compose, Identity, MulByFunction, OperatorExpr,
                        PartialDeriv, Scale, Sum, Zero, operator_variables)
from .polyseries import DegreeOverflowError, NonPolynomialError, PolySeries, to_fraction

__all__ = [
    "DegreeBudgetError",
    "PushforwardReport",
    "chronological_series",
    "pushforward_check",
    "pushforward_report",
]

_REV = "s__rev"


class DegreeBudgetError(DegreeOverflowError):
    """The truncation degree leaves no trustworthy monomials to compare."""


@dataclass
class PushforwardReport:
    equal: bool
    order: int
    degree: int
    window_degree: int
    checked_terms: int
    mismatches: list = field(default_factory=list)


def _to_poly(op: OperatorExpr, ring, degree, bindings, time, reverse):
    """Operator tree with coefficients pre-converted to PolySeries."""
    if isinstance(op, MulByFunction):
        c = PolySeries.from_expression(op.expr, ring, degree, bindings)
        if reverse:
            # D(T - s) for the reversed-time flow
            mapping = {v: PolySeries.variable(v, ring, degree) for v in ring}
            mapping[time] = mapping[time] - mapping[_REV]
            c = c.substitute(mapping)
        return ("mul", c)
    if isinstance(op, PartialDeriv):
        return ("d", op.var)
    if isinstance(op, Sum):
        return ("sum", [_to_poly(t, ring, degree, bindings, time, reverse) for t in op.terms])
    if isinstance(op, Compose):
        return ("compose", [_to_poly(t, ring, degree, bindings, time, reverse) for t in op.factors])
    if isinstance(op, Commutator):
        return ("comm", _to_poly(op.lhs, ring, degree, bindings, time, reverse),
                _to_poly(op.rhs, ring, degree, bindings, time, reverse))
    if isinstance(op, Scale):
        return ("scale", to_fraction(op.factor),
                _to_poly(op.child, ring, degree, bindings, time, reverse))
    if isinstance(op, Identity):
        return ("id",)
    if isinstance(op, Zero):
        return ("zero",)
    raise TypeError(f"unknown operator node {type(op).__name__}")


def _apply(node, f: PolySeries) -> PolySeries:
    kind = node[0]
    if kind == "mul":
        return node[1] * f
    if kind == "d":
        return f.derivative(node[1])
    if kind == "sum":
        out = f.scale(0)
        for t in node[1]:
            out = out + _apply(t, f)
        return out
    if kind == "compose":
        for t in reversed(node[1]):
            f = _apply(t, f)
        return f
    if kind == "comm":
        return _apply(node[1], _apply(node[2], f)) - _apply(node[2], _apply(node[1], f))
    if kind == "scale":
        return _apply(node[2], f).scale(node[1])
    if kind == "id":
        return f
    return f.scale(0)


def _degree_shift(node, space_idx) -> float:
    """Smallest change of spatial degree one application can cause."""
    kind = node[0]
    if kind == "mul":
        if node[1].is_zero():
            return float("inf")
        return min(sum(e[i] for i in space_idx) for e in node[1].coeffs)
    if kind == "d":
        return -1
    if kind == "sum":
        return min((_degree_shift(t, space_idx) for t in node[1]), default=float("inf"))
    if kind == "compose":
        return sum(_degree_shift(t, space_idx) for t in node[1])
    if kind == "comm":
        return _degree_shift(node[1], space_idx) + _degree_shift(node[2], space_idx)
    if kind == "scale":
        return _degree_shift(node[2], space_idx) if node[1] else float("inf")
    if kind == "id":
        return 0
    return float("inf")


def _lowering(op, variables, time, degree, bindings) -> int:
    ring = tuple(variables) + (time,)
    node = _to_poly(op, ring, degree, bindings, time, False)
    shift = _degree_shift(node, range(len(variables)))
    return 0 if shift == float("inf") else max(0, -int(shift))


def chronological_series(op: OperatorExpr, g: PolySeries, order: int, time: str = "t",
                         inverse: bool = False, degree: Optional[int] = None,
                         bindings: Optional[Mapping[str, object]] = None) -> PolySeries:
    """``T exp{int_0^t op} g`` (or its inverse) through ``t``-degree ``order``.

    The result lives on ``g.variables + (time,)`` with total degree cap
    ``degree`` (default ``g.degree + 2 * order``).  Coefficients of ``op``
    may depend on ``time``; other names must be bound.
    """
    if time in g.variables:
        raise ValueError(f"time variable {time!r} clashes with the function's variables")
    if order < 0:
        raise ValueError("order must be non-negative")
    cap = g.degree + 2 * order if degree is None else int(degree)
    bindings = dict(bindings or {})
    unknown = operator_variables(op) - set(g.variables) - {time} - set(bindings)
    if unknown:
        raise ValueError(f"operator uses unbound names {sorted(unknown)}")
    if not inverse:
        ring = tuple(g.variables) + (time,)
        node = _to_poly(op, ring, cap, bindings, time, False)
        u0 = g.rename(ring).with_degree(cap)
        u = u0
        for _ in range(order):
            u = u0 + _apply(node, u).integrate(time)
        return u
    # E^{-1} g is the flow of -D(T - s) in s from 0 to T, with T formal
    ring = tuple(g.variables) + (time, _REV)
    node = ("scale", -1, _to_poly(op, ring, cap, bindings, time, True))
    u0 = g.rename(ring).with_degree(cap)
    u = u0
    for _ in range(order):
        u = u0 + _apply(node, u).integrate(_REV)
    out_ring = tuple(g.variables) + (time,)
    mapping = {v: PolySeries.variable(v, out_ring, cap) for v in out_ring}
    mapping[_REV] = mapping[time]
    return u.substitute(mapping)


def _argument_names(F, n: int, names):
    if names is not None:
        names = tuple(names)
        if len(names) != n:
            raise ValueError(f"{len(names)} argument names for {n} functions")
        return names
    used = set(F.variables)
    for style in ("b{}", "b_{}"):
        cand = tuple(style.format(i + 1) for i in range(n))
        if used <= set(cand):
            return cand
    raise ValueError(f"F uses {sorted(used)}; expected names b1..b{n} or b_1..b_{n}")


def pushforward_report(generator: OperatorExpr, F, b: Sequence[PolySeries], order: int,
                       names: Optional[Sequence[str]] = None, time: str = "t",
                       inverse: bool = False,
                       bindings: Optional[Mapping[str, object]] = None) -> PushforwardReport:
    """Compare ``E F(b)`` and ``F(E b)`` exactly on the trustworthy window.

    Only monomials of ``t``-degree at most ``order`` and spatial degree at
    most ``D - order * lowering`` are compared, where ``D`` is the common
    degree cap of ``b`` and ``lowering`` is how far one application of the
    generator can reduce the spatial degree.
    """
    b = list(b)
    if not b:
        raise ValueError("at least one argument function is required")
    variables, D = b[0].variables, b[0].degree
    for p in b[1:]:
        if p.variables != variables or p.degree != D:
            raise ValueError("all arguments must share variables and degree cap")
    F = as_expression(F)
    names = _argument_names(F, len(b), names)
    bindings = dict(bindings or {})
    try:
        F_poly = PolySeries.from_expression(F, names, max(D, 1) * 64, bindings)
    except NonPolynomialError as exc:
        raise NonPolynomialError(f"F is not polynomial: {exc}") from None

    lowering = _lowering(generator, variables, time, D, bindings)
    window = D - order * lowering
    if window < 0 or order < 0:
        raise DegreeBudgetError(
            f"degree cap {D} cannot support order {order} with lowering {lowering}")
    cap = D + 2 * order

    lhs_arg = F_poly.substitute({n: p for n, p in zip(names, b)})
    lhs = chronological_series(generator, lhs_arg, order, time, inverse, cap, bindings)
    pushed = [chronological_series(generator, p, order, time, inverse, cap, bindings) for p in b]
    rhs = F_poly.substitute(dict(zip(names, pushed)))

    nx = len(variables)

    def keep(e):
        return sum(e[:nx]) <= window and e[nx] <= order

    diff = (lhs - rhs).filter(keep)
    checked = len({e for e in list(lhs.coeffs) + list(rhs.coeffs) if keep(e)})
    mismatches = [(e, c) for e, c in diff.terms()][:10]
    return PushforwardReport(diff.is_zero(), order, D, window, checked, mismatches)


def pushforward_check(generator: OperatorExpr, F, b: Sequence[PolySeries], order: int = 4,
                      names: Optional[Sequence[str]] = None, time: str = "t",
                      inverse: bool = False,
                      bindings: Optional[Mapping[str, object]] = None) -> bool:
    """Exact truth value of ``E F(b) = F(E b)`` on the trustworthy window."""
    return pushforward_report(generator, F, b, order, names, time, inverse, bindings).equal
