"""Nonlinear ODEs solved as characteristic flows of derivative generators.

For a field ``f(t, c)`` with state names ``c_1..c_n`` the chronological
exponential ``T0 exp{int_a^t f . d/dc} c_i`` is the solution ``u_i(t, c)``
of ``u' = f(t, u)``, ``u(a) = c``.  Every operation here evaluates such
exponentials as flows, except :func:`lie_series_solution` and
:func:`omega_linearized_solution`, which sum operator series directly and
serve as independent cross-checks of the flow path.

Conventions
-----------
* ``zeta(t, rho)`` pulls ``rho`` back along the flow to time ``a``; it
  solves ``z_t + f . grad z = 0`` with ``z(a, c) = c``, so
  ``zeta(t, u(t, c)) = c``.
* ``Z(t, tau, rho)`` is the point at time ``tau`` of the trajectory through
  ``rho`` at time ``t``; it satisfies ``zeta(tau, Z) = zeta(t, rho)``.
* ``b(t, x)`` solves ``db/dt = -f(t, b)``, ``b(a) = x``.  Its partner
  ``zeta_b`` pulls back along that reversed-sign flow, and the two invert
  each other: ``zeta_b(t, b(t, x)) = x`` and ``b(t, zeta_b(t, x)) = x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853, OdeSolution, quad

from .expr import (BinOp, Call, Const, Expression, Neg, Var, as_expression, differentiate,
                   eval_expr)
from .expr import _diff, add as _add, mul as _mul
from .opalg.polyseries import NonPolynomialError, PolySeries
from .texp.matfun import CallableMatrixFunction
from .texp.product import ordered_exp

__all__ = [
    "CharField",
    "FlowResult",
    "FirstIntegralSet",
    "ConjugationResult",
    "LieSeriesResult",
    "OmegaSeriesResult",
    "BlowUpError",
    "FlowDomainError",
    "ConvergenceError",
    "GaugeSingularityError",
    "DerivativeBudgetError",
    "TruncationBudgetError",
    "ClosedFormDomainError",
    "flow",
    "solve_ode_characteristic",
    "solve_system_characteristic",
    "solve_nth_order",
    "companion_field",
    "first_integrals",
    "resolve_Z_newton",
    "lie_series_solution",
    "gauge_transform_solution",
    "omega_linearized_solution",
    "flow_conjugation_coefficients",
    "bernoulli_closed_form",
]

FLOW_TOL = 1e-12
BLOWUP_MAGNITUDE = 1e12
STEP_COLLAPSE = 1e-13
RESIDUAL_TOL = 1e-6


class BlowUpError(ArithmeticError):
    """The flow escapes to infinity before the requested time."""

    def __init__(self, message: str, escape_time: float):
        super().__init__(f"{message}; estimated escape time {escape_time:.12g}")
        self.escape_time = float(escape_time)


class FlowDomainError(ArithmeticError):
    """The field became non-finite along the trajectory."""


class ConvergenceError(ArithmeticError):
    """An iterative algebraic solve did not converge."""


class GaugeSingularityError(ArithmeticError):
    """``dz/dc`` vanishes on the traversed window."""


class DerivativeBudgetError(ArithmeticError):
    """Symbolic Lie derivatives grew beyond the node budget."""


class ClosedFormDomainError(ArithmeticError):
    """A closed form leaves the real domain (negative base, fractional power)."""


class TruncationBudgetError(ArithmeticError):
    """The omega-series budget cannot deliver the requested accuracy."""

    def __init__(self, message: str, tail: float):
        super().__init__(message)
        self.tail = float(tail)


# ---------------------------------------------------------------------------
# fields


_SCALAR_NAMES = ("c", "u", "x", "c1", "c_1", "y")


@dataclass(frozen=True)
class CharField:
    """Vector field ``f_i(t, c_1..c_n)`` with base time ``a``.

    Parameters
    ----------
    components : expressions (or strings) for ``f_1..f_n``
    names : state variable names; defaults to ``c1..cn`` or, for ``n = 1``,
        the single non-time name used by the expression
    a : base time
    time : name of the time variable
    params : values for any remaining free names
    """

    components: tuple
    names: tuple = None
    a: float = 0.0
    time: str = "t"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        comps = self.components
        if isinstance(comps, (str, Expression, int, float)):
            comps = (comps,)
        comps = tuple(as_expression(c) for c in comps)
        if not comps:
            raise ValueError("a field needs at least one component")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "params", dict(self.params or {}))
        object.__setattr__(self, "a", float(self.a))
        n = len(comps)
        used = set().union(*(c.variables for c in comps)) - {self.time} - set(self.params)
        names = self.names
        if names is None:
            if n == 1:
                cands = [s for s in _SCALAR_NAMES if s in used]
                names = (cands[0],) if len(cands) == 1 and used <= {cands[0]} else (
                    (sorted(used)[0],) if len(used) == 1 else ("c",))
            else:
                names = tuple(f"c{i + 1}" for i in range(n))
                for style in ("c{}", "x{}", "u{}", "y{}", "c_{}", "x_{}"):
                    cand = tuple(style.format(i + 1) for i in range(n))
                    if used <= set(cand):
                        names = cand
                        break
        names = tuple(names)
        if len(names) != n:
            raise ValueError(f"{len(names)} state names for {n} components")
        if len(set(names)) != n or self.time in names:
            raise ValueError("state names must be distinct and differ from the time name")
        extra = used - set(names)
        if extra:
            raise ValueError(f"unbound names {sorted(extra)} in the field")
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def argnames(self) -> tuple:
        return (self.time,) + self.names + tuple(sorted(self.params))

    def evaluator(self):
        """``F(t, Y) -> array`` with ``Y`` of shape ``(n, ...)``."""
        fns = [c.compile(self.argnames) for c in self.components]
        pvals = tuple(self.params[k] for k in sorted(self.params))

        def F(t, Y):
            with np.errstate(all="ignore"):
                return np.stack([np.broadcast_to(np.asarray(fn(t, *Y, *pvals), dtype=float),
                                                 np.shape(Y[0])) for fn in fns])
        return F

    def negated(self) -> "CharField":
        return CharField(tuple(as_expression(f"-({c})") for c in self.components),
                         self.names, self.a, self.time, self.params)

    def rebased(self, a: float) -> "CharField":
        return CharField(self.components, self.names, a, self.time, self.params)


def _as_field(f, a: Optional[float] = None, names=None, params=None) -> CharField:
    if isinstance(f, CharField):
        return f if a is None or float(a) == f.a else f.rebased(a)
    return CharField(f, names, 0.0 if a is None else a, params=params or {})


# ---------------------------------------------------------------------------
# flow engine


@dataclass
class FlowResult:
    """Solution values and diagnostics of a characteristic flow.

    ``values`` has shape ``(n,)`` for one initial point or ``(m, n)`` for a
    batch.  ``derivatives`` holds ``f(t, u)`` at the final time.
    ``residual`` is the largest scaled finite-difference residual
    ``|du/dt - f(t, u)| / max(1, |f|)`` sampled inside the interval.
    """

    values: np.ndarray
    t: float
    derivatives: np.ndarray
    steps: int
    tolerance: float
    residual: float
    names: tuple = ()

    @property
    def u(self):
        """First state component (the solution of an nth-order equation)."""
        return self.values[..., 0]


def _rhs(field_: CharField, m: int):
    F = field_.evaluator()
    n = field_.dim

    def rhs(t, y):
        Y = y.reshape(m, n).T
        out = F(t, Y)
        if not np.all(np.isfinite(out)):
            raise FlowDomainError(f"field is not finite at t={t:.12g}")
        return out.T.reshape(-1)
    return rhs


def _integrate(rhs, t0, t1, y0, tol, dense=False):
    """Adaptive DOP853 march that stops early on blow-up or step collapse.

    Returns a namespace with ``t``, ``y`` (shape ``(n, steps)``), ``status``
    (0 reached ``t1``, 1 state above the blow-up bound, -1 step collapse or
    solver failure) and ``sol`` (dense interpolant or ``None``).
    """
    solver = DOP853(rhs, t0, np.asarray(y0, dtype=float), t1, rtol=tol, atol=tol)
    floor = STEP_COLLAPSE * abs(t1 - t0)
    ts, ys, pieces = [t0], [solver.y.copy()], []
    status = 0
    while solver.status == "running":
        solver.step()
        if solver.status == "failed":
            status = -1
            break
        ts.append(solver.t)
        ys.append(solver.y.copy())
        if dense:
            pieces.append(solver.dense_output())
        if np.max(np.abs(solver.y)) > BLOWUP_MAGNITUDE:
            status = 1
            break
        if solver.status == "running" and solver.step_size is not None and solver.step_size < floor:
            status = -1
            break
    sol = OdeSolution(ts, pieces) if dense and pieces else None
    return SimpleNamespace(t=np.asarray(ts), y=np.asarray(ys).T, status=status, sol=sol)


def _escape_time(rhs, t0, t1, y0, reached) -> float:
    """Bisect for the last time the flow stays below the blow-up bound.

    ``reached`` is where the failed march stopped; it bounds the escape
    time from above up to the collapse floor.
    """
    lo, hi = t0, reached if reached != t0 else t1
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi) or abs(hi - lo) <= 1e-10 * abs(t1 - t0):
            break
        try:
            sol = _integrate(rhs, t0, mid, y0, 1e-10)
            ok = sol.status == 0
        except FlowDomainError:
            ok, sol = False, None
        if ok:
            lo = mid
        else:
            hi = mid if sol is None else min(mid, float(sol.t[-1]))
    return 0.5 * (lo + hi)


def _check_sol(sol, rhs, t0, t1, y0):
    span = abs(t1 - t0)
    reached = float(sol.t[-1]) if sol.t.size else t0
    collapsed = sol.t.size > 1 and np.min(np.abs(np.diff(sol.t[-5:]))) < STEP_COLLAPSE * span
    if sol.status == 1 or sol.status == -1 or (collapsed and reached != t1):
        est = _escape_time(rhs, t0, t1, y0, reached)
        raise BlowUpError(f"flow from t={t0:.12g} blows up before t={t1:.12g}", est)


def flow(field_, y0, t0: float, t1: float, tol: float = FLOW_TOL, dense: bool = False):
    """Transport points ``y0`` (shape ``(n,)`` or ``(m, n)``) from ``t0`` to ``t1``.

    Returns ``(values, sol)``.  Backward flows (``t1 < t0``) are allowed.
    """
    field_ = _as_field(field_)
    y0 = np.asarray(y0, dtype=float)
    n = field_.dim
    single = y0.ndim == 1 and (y0.size == n)
    if n == 1 and y0.ndim == 1 and y0.size != 1:
        Y0 = y0.reshape(-1, 1)
        single = False
    elif single:
        Y0 = y0.reshape(1, n)
    elif y0.ndim == 0:
        Y0, single = y0.reshape(1, 1), True
    else:
        Y0 = y0.reshape(-1, n)
    if not np.all(np.isfinite(Y0)):
        raise ValueError("initial values must be finite")
    m = Y0.shape[0]
    if t1 == t0:
        out = Y0.copy()
        return (out[0] if single else (out[:, 0] if n == 1 and y0.ndim == 1 else out)), None
    rhs = _rhs(field_, m)
    flat = Y0.reshape(-1)
    try:
        sol = _integrate(rhs, t0, t1, flat, tol, dense)
    except FlowDomainError as exc:
        raise FlowDomainError(f"{exc} (flow from t={t0:.12g})") from None
    _check_sol(sol, rhs, t0, t1, flat)
    out = sol.y[:, -1].reshape(m, n)
    if single:
        return out[0], sol
    if n == 1 and y0.ndim == 1:
        return out[:, 0], sol
    return out, sol


def _fd_residual(field_: CharField, sol, t0: float, t1: float, m: int) -> float:
    """Scaled residual of ``u' = f`` from a 5-point stencil on dense output."""
    if sol is None or sol.sol is None:
        return 0.0
    span = t1 - t0
    h = 1e-3 * span
    F = field_.evaluator()
    worst = 0.0
    for frac in (0.25, 0.5, 0.75):
        s = t0 + frac * span
        d = (-sol.sol(s + 2 * h) + 8 * sol.sol(s + h) - 8 * sol.sol(s - h)
             + sol.sol(s - 2 * h)) / (12 * h)
        y = sol.sol(s).reshape(m, field_.dim)
        f = F(s, y.T).T.reshape(-1)
        worst = max(worst, float(np.max(np.abs(d - f) / np.maximum(1.0, np.abs(f)))))
    return worst


def _flow_result(field_: CharField, c, t, tol, single_scalar=False) -> FlowResult:
    c = np.asarray(c, dtype=float)
    if t < field_.a:
        raise ValueError("t must be at least the base time a")
    vals, sol = flow(field_, c, field_.a, t, tol, dense=True)
    vals = np.asarray(vals)
    F = field_.evaluator()
    batch = vals.reshape(-1, field_.dim)
    der = F(t, batch.T).T.reshape(vals.shape)
    steps = 0 if sol is None else int(sol.t.size - 1)
    res = _fd_residual(field_, sol, field_.a, t, batch.shape[0])
    if res > RESIDUAL_TOL:
        raise ArithmeticError(f"finite-difference residual {res:.2e} exceeds {RESIDUAL_TOL:g}")
    if single_scalar and vals.shape == (1,):
        vals, der = vals.reshape(()), der.reshape(())
    return FlowResult(vals, float(t), der, steps, float(tol), res, field_.names)


def solve_ode_characteristic(f, c, t: float, tol: float = FLOW_TOL, a: float | None = None,
                             params: Mapping[str, float] | None = None) -> FlowResult:
    """``u(t, c) = T0 exp{int_a^t f(tau, c) d/dc} c`` for a scalar field.

    The exponential acts on ``c`` as the flow of ``u' = f(t, u)``,
    ``u(a) = c``, integrated by an embedded Runge-Kutta pair.  ``c`` may be a
    number or a 1-D batch.  Raises :class:`BlowUpError` with an escape-time
    estimate if the solution leaves every bounded set before ``t``.
    """
    fld = _as_field(f, a, params=params)
    if fld.dim != 1:
        raise ValueError("solve_ode_characteristic needs a scalar field")
    return _flow_result(fld, c, t, tol, single_scalar=np.ndim(c) == 0)


def solve_system_characteristic(f, c, t: float, tol: float = FLOW_TOL, a: float | None = None,
                                names=None, params=None) -> FlowResult:
    """``u_i(t, c) = T0 exp{int_a^t sum_j f_j d/dc_j} c_i`` for a system."""
    fld = _as_field(f, a, names, params)
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != fld.dim:
        raise ValueError(f"initial point has {c.shape[-1]} components, field has {fld.dim}")
    return _flow_result(fld, c, t, tol)


def companion_field(f, n: int, a: float = 0.0, names=None, params=None) -> CharField:
    """First-order system ``(c_2, .., c_n, f)`` of ``u^(n) = f(t, u, .., u^(n-1))``.

    Default state names are ``c1..cn``; a field written in ``u, u1, .., u{n-1}``
    (``u{m}`` the ``m``-th derivative) is recognized as well.
    """
    if n < 1:
        raise ValueError("order n must be at least 1")
    f = as_expression(f)
    if names is None:
        names = tuple(f"c{i + 1}" for i in range(n))
        u_style = ("u",) + tuple(f"u{i}" for i in range(1, n))
        free = set(f.variables) - {"t"} - set(params or {})
        if free and free <= set(u_style) and not free <= set(names):
            names = u_style
        elif n == 1 and "c1" not in f.variables:
            others = set(f.variables) - {"t"} - set(params or {})
            if len(others) == 1:
                names = tuple(others)
    names = tuple(names)
    comps = tuple(as_expression(nm) for nm in names[1:]) + (f,)
    return CharField(comps, names, a, params=params or {})


def solve_nth_order(f, n: int, c, t: float, tol: float = FLOW_TOL, a: float = 0.0,
                    names=None, params=None) -> FlowResult:
    """Solve ``u^(n) = f(t, c_1..c_n)`` with ``c_{m+1}`` the ``m``-th derivative.

    Returns the flow of the companion field; ``values[..., m]`` is
    ``d^m u / dt^m`` and ``result.u`` the solution itself.
    """
    fld = companion_field(f, n, a, names, params)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape[-1] != n:
        raise ValueError(f"need {n} initial values, got {c.shape[-1]}")
    return _flow_result(fld, c, t, tol)


# ---------------------------------------------------------------------------
# first integrals


@dataclass
class FirstIntegralSet:
    """First integrals of one field at time ``t`` and evaluation points ``rho``.

    Attributes
    ----------
    zeta : pull-back of ``rho`` to the base time along ``u' = f``
    b : reversed-sign flow ``db/dt = -f(t, b)`` from ``b(a) = rho``
    zeta_b : pull-back of ``rho`` along the reversed-sign flow
    checks : largest absolute residuals of the three inversion relations
        (``zeta(t, u(t, rho)) = rho``, ``zeta_b(t, b) = rho`` and
        ``b(t, zeta_b) = rho``)
    """

    field: CharField
    t: float
    points: np.ndarray
    zeta: np.ndarray
    b: np.ndarray
    zeta_b: np.ndarray
    checks: dict
    tol: float

    def Z(self, tau, points=None) -> np.ndarray:
        """``Z(t, tau, rho)``: the trajectory through ``rho`` at ``t`` read at ``tau``."""
        pts = self.points if points is None else np.asarray(points, float).reshape(-1, self.field.dim)
        return flow(self.field, pts, self.t, float(tau), self.tol)[0]

    def zeta_at(self, s: float, points) -> np.ndarray:
        pts = np.asarray(points, float).reshape(-1, self.field.dim)
        return flow(self.field, pts, float(s), self.field.a, self.tol)[0]

    @property
    def passed(self) -> bool:
        return all(v <= self.check_tol for v in self.checks.values())

    @property
    def check_tol(self) -> float:
        scale = max(1.0, float(np.max(np.abs(self.points))))
        return 1e3 * self.tol * scale


def first_integrals(f, t: float, points, tol: float = FLOW_TOL, a: float | None = None,
                    names=None, params=None, strict: bool = True) -> FirstIntegralSet:
    """Compute ``zeta``, ``b`` and the inversion residuals at ``points``.

    ``points`` has shape ``(m, n)`` (or ``(m,)`` for a scalar field).  With
    ``strict`` a failed inversion check raises ``ArithmeticError``.
    """
    fld = _as_field(f, a, names, params)
    pts = np.asarray(points, dtype=float).reshape(-1, fld.dim)
    if t < fld.a:
        raise ValueError("t must be at least the base time a")
    rev = fld.negated()
    zeta = flow(fld, pts, t, fld.a, tol)[0]
    b = flow(rev, pts, fld.a, t, tol)[0]
    zeta_b = flow(rev, pts, t, fld.a, tol)[0]
    u = flow(fld, pts, fld.a, t, tol)[0]
    checks = {
        "zeta_of_solution": float(np.max(np.abs(flow(fld, u, t, fld.a, tol)[0] - pts))),
        "zeta_of_b": float(np.max(np.abs(flow(rev, b, t, fld.a, tol)[0] - pts))),
        "b_of_zeta": float(np.max(np.abs(flow(rev, zeta_b, fld.a, t, tol)[0] - pts))),
    }
    out = FirstIntegralSet(fld, float(t), pts, zeta, b, zeta_b, checks, float(tol))
    if strict and not out.passed:
        raise ArithmeticError(f"first-integral inversion checks failed: {checks}")
    return out


def resolve_Z_newton(fis: FirstIntegralSet, tau: float, max_iter: int = 50,
                     tol: float = 1e-11) -> np.ndarray:
    """Solve ``zeta(tau, Z) = zeta(t, rho)`` by damped Newton seeded at ``rho``.

    Independent of the direct flow in :meth:`FirstIntegralSet.Z`; the
    Jacobian is taken by central differences of the pull-back map.
    """
    n = fis.field.dim
    target = fis.zeta
    Z = fis.points.copy()

    def G(P):
        return fis.zeta_at(tau, P) - target

    r = G(Z)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol * max(1.0, float(np.max(np.abs(target)))):
            return Z
        h = 1e-6 * np.maximum(1.0, np.abs(Z))
        J = np.empty((Z.shape[0], n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            J[:, :, j] = (G(Z + h[:, j:j + 1] * e) - G(Z - h[:, j:j + 1] * e)) / (2 * h[:, j:j + 1])
        step = np.linalg.solve(J, r[..., None])[..., 0]
        lam = 1.0
        while lam > 1e-4:
            trial = Z - lam * step
            try:
                rt = G(trial)
            except (BlowUpError, FlowDomainError):
                lam *= 0.5
                continue
            if np.max(np.abs(rt)) < np.max(np.abs(r)):
                Z, r = trial, rt
                break
            lam *= 0.5
        else:
            break
    if np.max(np.abs(r)) <= 1e3 * tol * max(1.0, float(np.max(np.abs(target)))):
        return Z
    raise ConvergenceError(f"Newton resolve of Z stalled with residual {np.max(np.abs(r)):.2e}")


# ---------------------------------------------------------------------------
# integral-free (Lie series) form


@dataclass
class LieSeriesResult:
    """Partial sum of the integral-free series; ``backend`` names the
    symbolic representation used for the Lie derivatives."""

    values: np.ndarray
    error_estimate: float
    order: int
    backend: str


def _dag_nodes(root) -> int:
    """Number of distinct node objects (shared subtrees counted once)."""
    seen, stack = set(), [root]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if isinstance(n, Neg):
            stack.append(n.arg)
        elif isinstance(n, BinOp):
            stack.extend((n.left, n.right))
        elif isinstance(n, Call):
            stack.extend(n.args)
    return len(seen)


def _dag_eval(root, bindings: Mapping[str, float]) -> float:
    """Evaluate a node graph once per shared subtree."""
    memo: dict = {}

    def ev(n):
        hit = memo.get(id(n))
        if hit is not None and hit[0] is n:
            return hit[1]
        if isinstance(n, (Const, Var)):
            out = float(eval_expr(Expression(n), bindings if isinstance(n, Var) else {}))
        elif isinstance(n, Neg):
            out = -ev(n.arg)
        elif isinstance(n, Call):
            out = float(eval_expr(Expression(Call(n.fn, (Var("_a"),))), {"_a": ev(n.args[0])}))
        else:
            x, y = ev(n.left), ev(n.right)
            out = float(eval_expr(Expression(BinOp(n.op, Var("_x"), Var("_y"))),
                                  {"_x": x, "_y": y}))
        memo[id(n)] = (n, out)
        return out

    return ev(root)


def _lie_terms_poly(fld: CharField, k: int, order: int):
    """Exact ``D^m c_k`` on the rational polynomial backend, or None."""
    ring = (fld.time,) + fld.names
    try:
        probe = [PolySeries.from_expression(c, ring, 64, fld.params) for c in fld.components]
    except (NonPolynomialError, ValueError, KeyError, TypeError):
        return None
    deg = max((p.max_degree for p in probe), default=0)
    cap = 1 + order * max(deg - 1, 0)
    comps = [PolySeries.from_expression(c, ring, cap, fld.params) for c in fld.components]
    g = PolySeries.variable(fld.names[k], ring, cap)
    terms = [g]
    for _ in range(order):
        nxt = g.derivative(fld.time)
        for name, fi in zip(fld.names, comps):
            nxt = nxt + fi.mul(g.derivative(name), strict=True)
        terms.append(nxt)
        g = nxt
    return terms


def _lie_terms(fld: CharField, k: int, order: int, budget: int) -> list:
    """``D^m c_k`` for ``m = 0..order`` with ``D = d/ds + sum f_i d/dc_i``.

    Subtrees are shared between successive derivatives; ``budget`` bounds
    the number of distinct nodes.
    """
    g = as_expression(fld.names[k]).root
    terms = [g]
    for m in range(order):
        memo_t: dict = {}
        nxt = _diff(g, fld.time, memo_t)
        for name, fi in zip(fld.names, fld.components):
            dg = _diff(g, name, {})
            nxt = _add(nxt, _mul(fi.root, dg))
        size = _dag_nodes(nxt)
        if size > budget:
            raise DerivativeBudgetError(
                f"Lie derivative of order {m + 1} has {size} distinct nodes (budget {budget})")
        terms.append(nxt)
        g = nxt
    return terms


def lie_series_solution(f, c, t: float, order: int, a: float | None = None, names=None,
                        params=None, budget: int = 200_000) -> LieSeriesResult:
    """Partial sum ``sum_{m<=N} (t-a)^m/m! D^m c_k |_{s=a}``.

    ``D = d/ds + sum_i f_i(s, c) d/dc_i`` is applied symbolically: exactly
    on rational polynomials when every component is polynomial in the time
    and state names, otherwise on shared expression graphs.  The magnitude
    of the last included term is returned as the error estimate.
    """
    fld = _as_field(f, a, names, params)
    if order < 0:
        raise ValueError("order must be non-negative")
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size != fld.dim:
        raise ValueError(f"initial point has {c.size} components, field has {fld.dim}")
    dt = float(t) - fld.a
    bind = {fld.time: fld.a, **dict(zip(fld.names, c)), **fld.params}
    vals = np.zeros(fld.dim)
    last = 0.0
    backend = "polynomial"
    for k in range(fld.dim):
        terms = _lie_terms_poly(fld, k, order)
        if terms is not None:
            coeffs = [float(g.evaluate({v: bind[v] for v in g.variables})) for g in terms]
        else:
            backend = "graph"
            coeffs = [_dag_eval(g, bind) for g in _lie_terms(fld, k, order, budget)]
        parts = [coeffs[m] * dt ** m / math.factorial(m) for m in range(order + 1)]
        vals[k] = math.fsum(parts)
        last = max(last, abs(parts[-1]))
    return LieSeriesResult(vals if fld.dim > 1 else vals.reshape(()), float(last), order,
                           backend)


# ---------------------------------------------------------------------------
# gauge transformation


def gauge_transform_solution(f, z, c, t: float, tol: float = FLOW_TOL, a: float | None = None,
                             params=None, samples: int = 65) -> float:
    """``u = z(t, w(t))`` where ``w`` flows the transformed field
    ``(f(tau, z) - dz/dtau) / (dz/dc)`` from ``w(a) = c``.

    ``z`` is an expression in the time name and the state name with
    ``z(a, c) = c``.
    """
    fld = _as_field(f, a, params=params)
    if fld.dim != 1:
        raise ValueError("gauge transformation is defined for scalar fields")
    z = as_expression(z)
    tn, cn = fld.time, fld.names[0]
    extra = set(z.variables) - {tn, cn} - set(fld.params)
    if len(extra) == 1 and cn not in z.variables:
        # the gauge may name its state variable differently from the field
        z = z.subs({extra.pop(): cn})
    if extra:
        raise ValueError(f"gauge function uses unbound names {sorted(extra)}")
    zc = differentiate(z, cn)
    zt = differentiate(z, tn)
    start = float(eval_expr(z, {**fld.params, tn: fld.a, cn: float(c)}))
    if abs(start - float(c)) > 1e-12 * max(1.0, abs(float(c))):
        raise ValueError("gauge function must satisfy z(a, c) = c")
    f_of_z = fld.components[0].subs({cn: z})
    g = as_expression(f"(({f_of_z})-({zt}))/({zc})")
    gfield = CharField((g,), (cn,), fld.a, tn, fld.params)
    args = (tn, cn) + tuple(sorted(fld.params))
    pv = tuple(fld.params[k] for k in sorted(fld.params))
    zc_fn = zc.compile(args)
    z_fn = z.compile(args)
    if t == fld.a:
        return float(c)
    try:
        w_end, sol = flow(gfield, np.array([float(c)]), fld.a, t, tol, dense=True)
    except BlowUpError as exc:
        # the transformed field is singular where dz/dc vanishes
        near = fld.a + (exc.escape_time - fld.a) * (1 - 1e-6)
        w_near = float(flow(gfield, np.array([float(c)]), fld.a, near, 1e-10)[0][0])
        with np.errstate(all="ignore"):
            ratio = abs(float(zc_fn(near, w_near, *pv)) / float(zc_fn(fld.a, float(c), *pv)))
        if not np.isfinite(ratio) or ratio < 1e-4:
            raise GaugeSingularityError(
                f"dz/dc vanishes near t={exc.escape_time:.6g} on the traversed window") from None
        raise
    ts = np.linspace(fld.a, t, samples)
    ws = sol.sol(ts)[0]
    with np.errstate(all="ignore"):
        d = np.broadcast_to(zc_fn(ts, ws, *pv), ts.shape)
    if not np.all(np.isfinite(d)) or np.any(np.abs(d) < 1e-12) or np.any(
            np.sign(d) != np.sign(d[0])):
        raise GaugeSingularityError("dz/dc vanishes or changes sign on the traversed window")
    with np.errstate(all="ignore"):
        return float(z_fn(t, float(w_end[0]), *pv))


# ---------------------------------------------------------------------------
# omega linearization


@dataclass
class OmegaSeriesResult:
    """``value = dS/domega`` at ``omega = 0``; ``coefficients[k]`` is the
    coefficient of ``omega^k`` in the truncated ``S(t, omega)``."""

    value: float
    coefficients: np.ndarray
    tail: float
    budget: int
    degree: int


def _poly_coefficients(f: Expression, var: str, time: str, params, max_degree: int = 16):
    """Expressions ``a_j(t)`` with ``f = sum_j a_j(t) var^j``; checked on samples."""
    rng = np.random.default_rng(12345)
    ts = rng.uniform(-1.0, 1.0, 7)
    us = rng.uniform(-1.0, 1.0, 7)
    derivs = [f]
    for _ in range(max_degree + 1):
        derivs.append(differentiate(derivs[-1], var))
    args = (time, var) + tuple(sorted(params))
    pv = tuple(params[k] for k in sorted(params))
    degree = None
    for j, d in enumerate(derivs):
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(d.compile(args)(ts, us, *pv), ts.shape)
        if np.all(np.isfinite(vals)) and np.all(np.abs(vals) <= 1e-12):
            degree = j - 1
            break
    if degree is None:
        raise ValueError(f"field is not polynomial in {var!r} of degree <= {max_degree}")
    coeffs = []
    for j in range(max(degree, 0) + 1):
        coeffs.append(as_expression(f"({derivs[j].subs({var: 0.0})})/{math.factorial(j)}"))
    return coeffs, max(degree, 0)


def omega_linearized_solution(f, c: float, t: float, budget: int = 30, a: float = 0.0,
                              params=None, tol: float = 1e-6,
                              engine_tol: float = 1e-12) -> OmegaSeriesResult:
    """Solve ``u' = f(t, u)`` through the linear equation for ``S = exp(omega u)``.

    ``S`` is truncated to ``omega``-degree ``budget``.  The generator
    ``omega f(t, d/domega)`` maps the scaled coefficients ``s_m = m! [omega^m]S``
    by ``s_m' = m sum_j a_j(t) s_{m+j-1}``, a linear system advanced by the
    ordered-exponential engine.  The tail is the change in ``u`` when the
    budget is lowered by the polynomial degree ``d``; a tail above ``tol``
    raises :class:`TruncationBudgetError`.
    """
    fld = _as_field(f, a, params=params)
    if fld.dim != 1:
        raise ValueError("omega linearization is defined for scalar fields")
    coeffs, d = _poly_coefficients(fld.components[0], fld.names[0], fld.time, fld.params)
    if budget < 1:
        raise ValueError("budget must be at least 1")
    args = (fld.time,) + tuple(sorted(fld.params))
    pv = tuple(fld.params[k] for k in sorted(fld.params))
    afns = [e.compile(args) for e in coeffs]

    def run(B: int) -> np.ndarray:
        def gen(ts):
            ts = np.atleast_1d(ts)
            out = np.zeros((ts.size, B + 1, B + 1))
            avals = [np.broadcast_to(fn(ts, *pv), ts.shape) for fn in afns]
            for m in range(1, B + 1):
                for j, av in enumerate(avals):
                    k = m + j - 1
                    if k <= B:
                        out[:, m, k] += m * av
            return out
        s0 = float(c) ** np.arange(B + 1)
        if t == fld.a:
            return s0
        E = ordered_exp(CallableMatrixFunction(gen, B + 1), fld.a, t, "T", 1.0, tol=engine_tol)
        return E @ s0

    s = run(budget)
    closes = d <= 1
    if closes:
        tail = 0.0
    elif budget // d < 1 or budget - d < 1:
        tail = float("inf")
    else:
        tail = abs(float(s[1]) - float(run(budget - d)[1]))
    if tail > tol:
        raise TruncationBudgetError(
            f"omega budget {budget} leaves a tail of {tail:.3g} (degree {d}, tolerance {tol:g})",
            tail)
    fact = np.array([math.factorial(k) for k in range(budget + 1)], dtype=float)
    return OmegaSeriesResult(float(s[1]), s / fact, tail, budget, d)


# ---------------------------------------------------------------------------
# conjugation of partial derivatives by a derivative flow


@dataclass
class ConjugationResult:
    """``p[q, i, k]``: coefficient of ``d/dx_k`` in the conjugated ``d/dx_i``
    at sample ``q``; ``check_error`` compares against flow composition."""

    p: np.ndarray
    points: np.ndarray
    t: float
    check_error: float


def flow_conjugation_coefficients(h, interval: Sequence[float], points, names=None,
                                  params=None, tol: float = 1e-10,
                                  check: bool = True, test_functions: int = 5) -> ConjugationResult:
    """Coefficients ``p_ik(t, x)`` of
    ``K_i = T0 exp{-int H} d/dx_i T exp{int H} = sum_k p_ik d/dx_k``
    with ``H = sum_j h_j(tau, x) d/dx_j`` over ``interval = (a, t)``.

    ``p`` solves the linear system ``dp/dt = g p``, ``p(a) = I``, where
    ``g_ij = (dh_j/dx_i)(t, z(t, x))`` and ``z`` follows ``dz/dt = -h(t, z)``
    from ``z(a) = x``.  The check applies ``K_i`` to test functions
    directly: ``K_i phi(x) = d/dx_i [phi(Y(y))] at y = z(t, x)`` with ``Y``
    the inverse map of ``z``, using ``test_functions`` functions
    ``sin(w.y) + (w.y)^2`` with random directions ``w``.
    """
    a, t = (float(v) for v in interval)
    if t < a:
        raise ValueError("interval must satisfy a <= t")
    fld = CharField(h, names, a, params=params or {})
    m = fld.dim
    pts = np.asarray(points, dtype=float).reshape(-1, m)
    if t == a:
        return ConjugationResult(np.broadcast_to(np.eye(m), (len(pts), m, m)).copy(), pts, t, 0.0)
    rev = fld.negated()
    args = fld.argnames
    pv = tuple(fld.params[k] for k in sorted(fld.params))
    grad = [[differentiate(hj, xi).compile(args) for hj in fld.components] for xi in fld.names]
    P = np.empty((len(pts), m, m))
    for q, x in enumerate(pts):
        _, sol = flow(rev, x, a, t, min(tol * 1e-2, FLOW_TOL), dense=True)

        def gen(ts, sol=sol):
            ts = np.atleast_1d(ts)
            Z = sol.sol(ts)
            out = np.empty((ts.size, m, m))
            with np.errstate(all="ignore"):
                for i in range(m):
                    for j in range(m):
                        out[:, i, j] = np.broadcast_to(grad[i][j](ts, *Z, *pv), ts.shape)
            return out
        P[q] = ordered_exp(CallableMatrixFunction(gen, m), a, t, "T", 1.0, tol=tol)
    err = (_conjugation_check(fld, rev, P, pts, a, t, test_functions) if check
           else float("nan"))
    return ConjugationResult(P, pts, t, err)


def _conjugation_check(fld, rev, P, pts, a, t, count: int = 5) -> float:
    m = fld.dim
    rng = np.random.default_rng(7)
    W = rng.uniform(-1, 1, (count, m))
    phis = [lambda y, w=w: np.sin(y @ w) + (y @ w) ** 2 for w in W]
    dphis = [lambda y, w=w: (np.cos(y @ w) + 2 * (y @ w))[..., None] * w for w in W]
    worst = 0.0
    for q, x in enumerate(pts):
        z = flow(rev, x, a, t)[0]
        hstep = 1e-3 * max(1.0, float(np.max(np.abs(z))))
        for i in range(m):
            e = np.zeros(m)
            e[i] = hstep
            stencil = np.array([z + 2 * e, z + e, z - e, z - 2 * e])
            Y = flow(rev, stencil, t, a)[0]
            for phi, dphi in zip(phis, dphis):
                v = phi(Y)
                direct = (-v[0] + 8 * v[1] - 8 * v[2] + v[3]) / (12 * hstep)
                via_p = float(P[q, i] @ dphi(x))
                worst = max(worst, abs(direct - via_p) / max(1.0, abs(via_p)))
    return worst


# ---------------------------------------------------------------------------
# Bernoulli closed form


def bernoulli_closed_form(a, b, alpha: float, c: float, t: float, start: float = 0.0,
                          params=None) -> float:
    """Classical solution of ``u' = a(t) u^alpha + b(t) u``, ``u(start) = c``:
    ``[c^(1-alpha) + (1-alpha) int a e^{(alpha-1) int b}]^(1/(1-alpha)) e^{int b}``.
    """
    if alpha == 1:
        raise ValueError("alpha = 1 is the linear case; use the flow solver")
    params = dict(params or {})
    names = ("t",) + tuple(sorted(params))
    pv = tuple(params[k] for k in sorted(params))
    fa = as_expression(a).compile(names)
    fb = as_expression(b).compile(names)

    def scalar(fn, s):
        return float(np.asarray(fn(s, *pv), dtype=float))

    def B(s):
        return quad(lambda r: scalar(fb, r), start, s, epsabs=1e-14, epsrel=1e-13, limit=200)[0]

    inner = quad(lambda s: scalar(fa, s) * math.exp((alpha - 1) * B(s)), start, t,
                 epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    if c < 0 and float(1 - alpha) != int(1 - alpha):
        raise ClosedFormDomainError("negative initial value with a non-integer power")
    base = float(c) ** (1 - alpha) + (1 - alpha) * inner
    p = 1.0 / (1 - alpha)
    if base < 0 and p != int(p):
        raise ClosedFormDomainError(
            f"closed-form base {base:.6g} is negative with exponent {p:.6g}")
    if base == 0 and p < 0:
        raise ClosedFormDomainError("closed-form base vanishes: the solution has escaped")
    return float(base ** p) * math.exp(B(t))
