"""Truncated multivariate polynomials with exact rational coefficients."""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping, Sequence

from ..expr import BinOp, Call, Const, Expression, Neg, Var, as_expression

__all__ = [
    "PolySeries",
    "DEFAULT_DEGREE",
    "DegreeOverflowError",
    "NonPolynomialError",
    "to_fraction",
]

DEFAULT_DEGREE = 12


class DegreeOverflowError(ArithmeticError):
    """A strict operation would have discarded terms above the degree cap."""


class NonPolynomialError(ValueError):
    """An expression cannot be represented exactly as a polynomial."""


def to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise NonPolynomialError("non-finite coefficient")
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    try:
        return Fraction(float(value))
    except (TypeError, ValueError) as exc:
        raise NonPolynomialError(f"cannot read {value!r} as a rational number") from exc


Exponent = tuple


class PolySeries:
    """Polynomial in ``variables`` truncated at total degree ``degree``.

    Coefficients are :class:`fractions.Fraction`; zero coefficients are never
    stored.  Arithmetic drops every term above ``degree`` (consistent
    truncation); the ``strict`` variants raise instead.
    """

    __slots__ = ("variables", "degree", "coeffs")

    def __init__(self, variables: Sequence[str], degree: int = DEFAULT_DEGREE,
                 coeffs: Mapping[Exponent, object] | None = None):
        self.variables = tuple(variables)
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("duplicate variable names")
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = int(degree)
        out: dict = {}
        nv = len(self.variables)
        for e, c in (coeffs or {}).items():
            e = tuple(int(k) for k in e)
            if len(e) != nv or any(k < 0 for k in e):
                raise ValueError(f"bad exponent {e} for variables {self.variables}")
            if sum(e) > self.degree:
                raise DegreeOverflowError(f"term of degree {sum(e)} exceeds cap {self.degree}")
            c = to_fraction(c)
            if c:
                out[e] = out.get(e, Fraction(0)) + c
        self.coeffs = {e: c for e, c in out.items() if c}

    # -- construction ---------------------------------------------------
    def _new(self, coeffs: dict, degree: int | None = None) -> "PolySeries":
        obj = object.__new__(PolySeries)
        obj.variables = self.variables
        obj.degree = self.degree if degree is None else degree
        obj.coeffs = {e: c for e, c in coeffs.items() if c}
        return obj

    @classmethod
    def zero(cls, variables, degree=DEFAULT_DEGREE) -> "PolySeries":
        return cls(variables, degree)

    @classmethod
    def constant(cls, value, variables, degree=DEFAULT_DEGREE) -> "PolySeries":
        return cls(variables, degree, {(0,) * len(tuple(variables)): value})

    @classmethod
    def variable(cls, name: str, variables, degree=DEFAULT_DEGREE) -> "PolySeries":
        variables = tuple(variables)
        if name not in variables:
            raise ValueError(f"{name!r} is not one of {variables}")
        e = tuple(1 if v == name else 0 for v in variables)
        return cls(variables, degree, {e: 1})

    @classmethod
    def monomial(cls, exponents: Sequence[int], coeff=1, variables=(), degree=DEFAULT_DEGREE):
        return cls(variables, degree, {tuple(exponents): coeff})

    @classmethod
    def from_expression(cls, expr, variables: Sequence[str], degree: int = DEFAULT_DEGREE,
                        bindings: Mapping[str, object] | None = None,
                        strict: bool = False) -> "PolySeries":
        """Exact conversion of a polynomial expression.

        Names not in ``variables`` must be supplied in ``bindings``; their
        values are read exactly as rationals.  Division is allowed only by
        constant subexpressions and powers only with non-negative integer
        exponents.  With ``strict`` any term above the cap is an error.
        """
        e = as_expression(expr)
        variables = tuple(variables)
        bindings = {k: to_fraction(v) for k, v in (bindings or {}).items()}
        conv = _Converter(variables, degree, bindings, strict)
        return conv.run(e.root)

    # -- inspection -----------------------------------------------------
    def __repr__(self) -> str:
        return f"PolySeries({self.to_string()!r}, degree={self.degree})"

    def __eq__(self, other) -> bool:
        if isinstance(other, PolySeries):
            return self.variables == other.variables and self.coeffs == other.coeffs
        if isinstance(other, (int, Fraction)):
            return self == self.constant(other, self.variables, self.degree)
        return NotImplemented

    def __hash__(self):
        return hash((self.variables, frozenset(self.coeffs.items())))

    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def max_degree(self) -> int:
        return max((sum(e) for e in self.coeffs), default=0)

    @property
    def min_degree(self) -> int:
        return min((sum(e) for e in self.coeffs), default=0)

    def terms(self):
        return sorted(self.coeffs.items(), key=lambda kv: (sum(kv[0]), kv[0]))

    def coefficient(self, exponents: Sequence[int]) -> Fraction:
        return self.coeffs.get(tuple(exponents), Fraction(0))

    def to_string(self) -> str:
        if not self.coeffs:
            return "0"
        parts = []
        for e, c in self.terms():
            mon = "*".join(
                v if k == 1 else f"{v}^{k}" for v, k in zip(self.variables, e) if k
            )
            cs = str(c) if c.denominator == 1 else f"({c})"
            if not mon:
                parts.append(cs)
            elif c == 1:
                parts.append(mon)
            elif c == -1:
                parts.append(f"-{mon}")
            else:
                parts.append(f"{cs}*{mon}")
        return " + ".join(parts).replace("+ -", "- ")

    def to_expression(self) -> Expression:
        from ..expr import parse_expr

        return parse_expr(self.to_string())

    # -- arithmetic -----------------------------------------------------
    def _check(self, other: "PolySeries"):
        if not isinstance(other, PolySeries):
            raise TypeError("expected PolySeries")
        if other.variables != self.variables:
            raise ValueError(f"variable mismatch: {self.variables} vs {other.variables}")

    def _coerce(self, other) -> "PolySeries":
        if isinstance(other, PolySeries):
            self._check(other)
            return other
        return self.constant(to_fraction(other), self.variables, self.degree)

    def __add__(self, other) -> "PolySeries":
        other = self._coerce(other)
        out = dict(self.coeffs)
        for e, c in other.coeffs.items():
            out[e] = out.get(e, Fraction(0)) + c
        return self._new(out, min(self.degree, other.degree))._truncated()

    __radd__ = __add__

    def __neg__(self) -> "PolySeries":
        return self._new({e: -c for e, c in self.coeffs.items()})

    def __sub__(self, other) -> "PolySeries":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "PolySeries":
        return self._coerce(other) - self

    def scale(self, c) -> "PolySeries":
        c = to_fraction(c)
        return self._new({e: c * v for e, v in self.coeffs.items()})

    def __mul__(self, other) -> "PolySeries":
        if not isinstance(other, PolySeries):
            return self.scale(other)
        return self.mul(other)

    __rmul__ = __mul__

    def mul(self, other: "PolySeries", strict: bool = False) -> "PolySeries":
        self._check(other)
        cap = min(self.degree, other.degree)
        by_deg = defaultdict(list)
        for e, c in other.coeffs.items():
            by_deg[sum(e)].append((e, c))
        degs = sorted(by_deg)
        out: dict = defaultdict(Fraction)
        for e1, c1 in self.coeffs.items():
            d1 = sum(e1)
            for d2 in degs:
                if d1 + d2 > cap:
                    if strict:
                        raise DegreeOverflowError(
                            f"product reaches degree {d1 + d2} above cap {cap}")
                    break
                for e2, c2 in by_deg[d2]:
                    out[tuple(a + b for a, b in zip(e1, e2))] += c1 * c2
        return self._new(out, cap)

    def __pow__(self, k: int) -> "PolySeries":
        if not isinstance(k, int) or k < 0:
            raise NonPolynomialError("only non-negative integer powers are polynomial")
        result = self.constant(1, self.variables, self.degree)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def _truncated(self) -> "PolySeries":
        if all(sum(e) <= self.degree for e in self.coeffs):
            return self
        return self._new({e: c for e, c in self.coeffs.items() if sum(e) <= self.degree})

    def truncate(self, degree: int) -> "PolySeries":
        return self._new({e: c for e, c in self.coeffs.items() if sum(e) <= degree},
                         min(degree, self.degree))

    def with_degree(self, degree: int) -> "PolySeries":
        """Same polynomial under a different cap (terms above it dropped)."""
        return self._new({e: c for e, c in self.coeffs.items() if sum(e) <= degree}, degree)

    def filter(self, keep) -> "PolySeries":
        return self._new({e: c for e, c in self.coeffs.items() if keep(e)})

    # -- calculus -------------------------------------------------------
    def derivative(self, var: str) -> "PolySeries":
        if var not in self.variables:
            return self._new({})
        i = self.variables.index(var)
        out = {}
        for e, c in self.coeffs.items():
            k = e[i]
            if k:
                ne = e[:i] + (k - 1,) + e[i + 1:]
                out[ne] = c * k
        return self._new(out)

    def integrate(self, var: str) -> "PolySeries":
        """Antiderivative in ``var`` vanishing at ``var = 0`` (truncated)."""
        i = self.variables.index(var)
        out = {}
        for e, c in self.coeffs.items():
            if sum(e) + 1 > self.degree:
                continue
            ne = e[:i] + (e[i] + 1,) + e[i + 1:]
            out[ne] = c / (e[i] + 1)
        return self._new(out)

    # -- evaluation and composition ------------------------------------
    def evaluate(self, bindings: Mapping[str, object], exact: bool = False):
        vals = []
        for v in self.variables:
            if v not in bindings:
                raise KeyError(f"missing binding for {v!r}")
            vals.append(to_fraction(bindings[v]) if exact else float(bindings[v]))
        total = Fraction(0) if exact else 0.0
        for e, c in self.coeffs.items():
            term = c if exact else float(c)
            for x, k in zip(vals, e):
                if k:
                    term = term * x ** k
            total += term
        return total

    def evaluate_array(self, arrays: Mapping[str, object]):
        import numpy as np

        total = 0.0
        for e, c in self.coeffs.items():
            term = float(c)
            for v, k in zip(self.variables, e):
                if k:
                    term = term * np.asarray(arrays[v], dtype=float) ** k
            total = total + term
        return total

    def substitute(self, mapping: Mapping[str, "PolySeries"]) -> "PolySeries":
        """Replace variables by polynomials over a (possibly different) ring.

        Every variable of ``self`` must be mapped; all images share one
        variable tuple, which becomes the result's.
        """
        images = list(mapping.values())
        if not images:
            raise ValueError("empty substitution")
        target = images[0]
        for p in images:
            target._check(p)
        missing = [v for v in self.variables if v not in mapping]
        if missing:
            raise KeyError(f"no image for {missing}")
        result = target._new({})
        powers: dict = {}

        def power(v, k):
            key = (v, k)
            if key not in powers:
                powers[key] = mapping[v] ** k
            return powers[key]

        for e, c in self.coeffs.items():
            term = target.constant(c, target.variables, target.degree)
            for v, k in zip(self.variables, e):
                if k:
                    term = term * power(v, k)
            result = result + term
        return result

    def rename(self, variables: Sequence[str]) -> "PolySeries":
        """Re-express over a superset of variables (missing ones get exponent 0)."""
        variables = tuple(variables)
        idx = []
        for v in self.variables:
            if v not in variables:
                raise ValueError(f"variable {v!r} missing from {variables}")
            idx.append(variables.index(v))
        out = {}
        for e, c in self.coeffs.items():
            ne = [0] * len(variables)
            for i, k in zip(idx, e):
                ne[i] = k
            out[tuple(ne)] = c
        obj = object.__new__(PolySeries)
        obj.variables, obj.degree, obj.coeffs = variables, self.degree, out
        return obj


class _Converter:
    def __init__(self, variables, degree, bindings, strict):
        self.variables = variables
        self.degree = degree
        self.bindings = bindings
        self.strict = strict

    def const(self, v) -> PolySeries:
        return PolySeries.constant(v, self.variables, self.degree)

    def run(self, node) -> PolySeries:
        if isinstance(node, Const):
            if node.text is None:
                return self.const(Fraction(node.value))
            try:
                return self.const(Fraction(node.text))
            except ValueError:
                raise NonPolynomialError(
                    f"constant {node.text!r} has no exact rational value") from None
        if isinstance(node, Var):
            if node.name in self.variables:
                return PolySeries.variable(node.name, self.variables, self.degree)
            if node.name in self.bindings:
                return self.const(self.bindings[node.name])
            raise NonPolynomialError(f"unbound name {node.name!r}")
        if isinstance(node, Neg):
            return -self.run(node.arg)
        if isinstance(node, Call):
            raise NonPolynomialError(f"{node.fn}() is not polynomial")
        op = node.op
        if op == "^":
            expo = self.run(node.right)
            if not expo.is_zero() and (expo.max_degree > 0):
                raise NonPolynomialError("exponent must be constant")
            k = expo.coefficient((0,) * len(self.variables))
            if k.denominator != 1 or k < 0:
                raise NonPolynomialError(f"exponent {k} is not a non-negative integer")
            base = self.run(node.left)
            k = int(k)
            if self.strict and base.max_degree * k > self.degree:
                raise DegreeOverflowError("power exceeds the degree cap")
            return base ** k
        lhs, rhs = self.run(node.left), self.run(node.right)
        if op == "+":
            return lhs + rhs
        if op == "-":
            return lhs - rhs
        if op == "*":
            return lhs.mul(rhs, strict=self.strict)
        if rhs.is_zero():
            raise ZeroDivisionError("division by zero in polynomial expression")
        if rhs.max_degree > 0:
            raise NonPolynomialError("division by a non-constant polynomial")
        return lhs.scale(1 / rhs.coefficient((0,) * len(self.variables)))
