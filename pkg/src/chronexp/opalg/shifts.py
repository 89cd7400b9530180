"""Shift operators ``exp{alpha d/dy}`` with an optional change of variable
``y = psi(x)``, and the closed-form conjugation of ``x^beta d/dx`` by the
flow of ``x^alpha d/dx``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.interpolate import make_interp_spline

from ..expr import DomainError, Expression, as_expression, differentiate, eval_expr
from .grid import Grid
from .operators import Compose, MulByFunction, OperatorExpr, PartialDeriv
from .polyseries import PolySeries

__all__ = [
    "ShiftSpec",
    "NonMonotoneError",
    "shift_apply",
    "shift_map",
    "shift_conjugation",
    "conjugation_coefficient",
]


class NonMonotoneError(ValueError):
    """The change of variable is not strictly monotone on the window."""


@dataclass(frozen=True)
class ShiftSpec:
    """``exp{alpha * d/d psi(x)}`` acting on functions of ``var``.

    Without ``psi`` this is the plain translation ``x -> x + alpha``; with
    ``psi`` it maps ``x -> psi^{-1}(psi(x) + alpha)``.
    """

    var: str
    displacement: Expression
    psi: Optional[Expression] = None

    def __post_init__(self):
        object.__setattr__(self, "displacement", as_expression(self.displacement))
        if self.psi is not None:
            psi = as_expression(self.psi)
            extra = set(psi.variables) - {self.var}
            if extra:
                raise ValueError(f"psi may depend only on {self.var!r}, found {sorted(extra)}")
            object.__setattr__(self, "psi", psi)
        if self.var in self.displacement.variables:
            raise ValueError("the displacement must not depend on the shifted variable")


def _displacement(s: ShiftSpec, bindings) -> float:
    return float(eval_expr(s.displacement, bindings or {}))


def _check_monotone(psi: Expression, var: str, lo: float, hi: float, samples: int = 2001):
    xs = np.linspace(lo, hi, samples)
    fn = psi.compile((var,))
    with np.errstate(all="ignore"):
        ys = np.broadcast_to(fn(xs), xs.shape)
    if not np.all(np.isfinite(ys)):
        raise NonMonotoneError(f"psi = {psi} is not finite on [{lo}, {hi}]")
    dy = np.diff(ys)
    if not (np.all(dy > 0) or np.all(dy < 0)):
        raise NonMonotoneError(f"psi = {psi} is not strictly monotone on [{lo}, {hi}]")
    return xs, ys


def _invert(psi: Expression, var: str, targets: np.ndarray, lo: float, hi: float,
            pad: float = 0.5) -> np.ndarray:
    """Solve ``psi(x) = target`` on a window extended by ``pad`` of its width.

    Uses the monotone table for a start and Newton steps on the symbolic
    derivative.  Targets with no preimage in the window give nan.
    """
    width = hi - lo
    wlo, whi = lo - pad * width, hi + pad * width
    try:
        xs, ys = _check_monotone(psi, var, wlo, whi, 8001)
    except NonMonotoneError:
        xs, ys = _check_monotone(psi, var, lo, hi, 8001)
    if ys[0] > ys[-1]:
        xs, ys = xs[::-1], ys[::-1]
    inside = (targets >= ys[0]) & (targets <= ys[-1])
    x = np.interp(targets, ys, xs)
    fn = psi.compile((var,))
    dfn = differentiate(psi, var).compile((var,))
    with np.errstate(all="ignore"):
        for _ in range(8):
            step = (np.broadcast_to(fn(x), x.shape) - targets) / np.broadcast_to(dfn(x), x.shape)
            step = np.where(np.isfinite(step), step, 0.0)
            x = np.clip(x - step, min(xs[0], xs[-1]), max(xs[0], xs[-1]))
    return np.where(inside, x, np.nan)


def shift_map(s: ShiftSpec, x, bindings: Mapping[str, float] | None = None,
              window: tuple[float, float] | None = None) -> np.ndarray:
    """Image of the points ``x`` under the shift's change of argument."""
    x = np.asarray(x, dtype=float)
    alpha = _displacement(s, bindings)
    if s.psi is None:
        return x + alpha
    lo, hi = window if window is not None else (float(np.min(x)), float(np.max(x)))
    _check_monotone(s.psi, s.var, lo, hi)
    fn = s.psi.compile((s.var,))
    with np.errstate(all="ignore"):
        targets = np.broadcast_to(fn(x), x.shape) + alpha
    return _invert(s.psi, s.var, targets, lo, hi)


def shift_apply(s: ShiftSpec, f, bindings: Mapping[str, float] | None = None, order: int = 5):
    """Apply the shift to a PolySeries (exact) or a Grid (resampled).

    On a PolySeries only the plain translation is supported and the
    displacement is read as an exact rational.  On a Grid the samples are
    interpolated with a spline of ``order`` along the shifted axis; images
    leaving the axis range are marked invalid.
    """
    if isinstance(f, PolySeries):
        if s.psi is not None:
            raise ValueError("a change of variable needs the Grid backend")
        if s.var not in f.variables:
            return f
        alpha = PolySeries.from_expression(s.displacement, f.variables, f.degree, bindings)
        if alpha.max_degree > 0:
            raise ValueError("displacement must be constant on the polynomial ring")
        mapping = {v: PolySeries.variable(v, f.variables, f.degree) for v in f.variables}
        mapping[s.var] = mapping[s.var] + alpha
        return f.substitute(mapping)
    if isinstance(f, Grid):
        if s.var not in f.variables:
            return f
        ax = f.variables.index(s.var)
        xs = f.axis(s.var)
        lo, hi = f.ranges[ax]
        mapped = shift_map(s, xs, bindings, window=(lo, hi))
        ok = np.isfinite(mapped) & (mapped >= lo - 1e-12 * (hi - lo)) & (mapped <= hi + 1e-12 * (hi - lo))
        vals = np.moveaxis(f.values, ax, 0)
        spline = make_interp_spline(xs, vals, k=order, axis=0)
        out = np.full_like(vals, np.nan)
        out[ok] = spline(np.clip(mapped[ok], lo, hi))
        mask = np.moveaxis(f.valid, ax, 0).copy()
        mask[~ok] = False
        return Grid(f.variables, f.ranges, np.moveaxis(out, 0, ax), np.moveaxis(mask, 0, ax))
    raise TypeError("shift_apply expects a PolySeries or a Grid")


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v == int(v) else repr(v)


def conjugation_coefficient(alpha: float, beta: float, a, var: str = "x") -> Expression:
    """Coefficient ``c(x)`` with
    ``exp{a x^alpha d/dx} x^beta d/dx exp{-a x^alpha d/dx} = c(x) d/dx``.

    The third branch is written as
    ``x^alpha * (x^(1-alpha) + (1-alpha) a)^((beta-alpha)/(1-alpha))``,
    which for ``x > 0`` equals the bracketed two-power form; it is real
    where the bracket is positive or the exponent is an integer.
    """
    a = as_expression(a)
    x = var
    if alpha == 1:
        return as_expression(f"exp({_num(beta - 1)}*({a}))*{x}^{_num(beta)}")
    if alpha == beta:
        return as_expression(f"{x}^{_num(alpha)}")
    p = (beta - alpha) / (1 - alpha)
    return as_expression(
        f"{x}^{_num(alpha)}*({x}^{_num(1 - alpha)}+{_num(1 - alpha)}*({a}))^{_num(p)}"
    )


def shift_conjugation(alpha: float, beta: float, a, var: str = "x") -> OperatorExpr:
    """Closed form of the conjugated operator as ``MulByFunction(c) o d/dx``."""
    return Compose((MulByFunction(conjugation_coefficient(alpha, beta, a, var)),
                    PartialDeriv(var)))
