"""Linear PDEs solved through ordered exponentials and characteristic flows.

* first-order transport ``u_t = phi + f0 u + sum_i f_i du/dx_i``
* the constant-coefficient parabolic equation on Fourier modes
* Helmholtz marching ``u_xx = -(Delta_2 + eps) u + q`` from Cauchy data
* compatible pairs ``u_x = A u``, ``u_y = B u``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .characteristics import (FLOW_TOL, BlowUpError, CharField, FlowDomainError,
                              first_integrals)
from .expr import Expression, as_expression, differentiate
from .texp.matfun import CallableMatrixFunction, ConstantMatrixFunction
from .texp.product import DenseOrderedExp, ordered_exp
from .texp.quadrature import integrate

__all__ = [
    "FirstOrderPDEProblem",
    "solve_first_order_pde",
    "first_order_pde_residual",
    "parabolic_mode_factor",
    "discrete_symbol",
    "periodic_second_difference",
    "parabolic_grid_crosscheck",
    "TransverseGrid",
    "HelmholtzProblem",
    "HelmholtzSolution",
    "solve_helmholtz_march",
    "helmholtz_residual",
    "MatrixField2D",
    "PDESystemProblem",
    "ConsistencyReport",
    "InconsistentSystemError",
    "check_consistency",
    "construct_compatible_B",
    "CompatibleB",
    "solve_pde_system",
    "pde_system_residual",
    "observed_order",
]

CONSISTENCY_GATE = 1e-6


def observed_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log error`` against ``log h``."""
    hs, errors = np.log(np.asarray(hs, float)), np.log(np.asarray(errors, float))
    return float(np.polyfit(hs, errors, 1)[0])


def _compile(e, names, params):
    e = as_expression(e)
    params = dict(params or {})
    extra = set(e.variables) - set(names) - set(params)
    if extra:
        raise ValueError(f"unbound names {sorted(extra)} in {e}")
    fn = e.compile(tuple(names) + tuple(sorted(params)))
    pv = tuple(params[k] for k in sorted(params))

    def f(*args):
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(fn(*args, *pv), dtype=float),
                                   np.broadcast(*args).shape if args else ())
    return f


# ---------------------------------------------------------------------------
# first-order PDE


@dataclass
class FirstOrderPDEProblem:
    """``u_t = phi + f0 u + sum_i f_i du/dx_i`` with ``u(a, x) = v(x)``.

    All coefficients are expressions in ``t`` and ``names``.
    """

    f: Sequence
    f0: object = 0
    phi: object = 0
    v: object = None
    a: float = 0.0
    names: Optional[Sequence[str]] = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.f = tuple(as_expression(c) for c in (
            [self.f] if isinstance(self.f, (str, Expression, int, float)) else self.f))
        n = len(self.f)
        if self.names is None:
            self.names = ("x",) if n == 1 else tuple(f"x{i + 1}" for i in range(n))
        self.names = tuple(self.names)
        if len(self.names) != n:
            raise ValueError("one spatial name per transport coefficient is required")
        if self.v is None:
            raise ValueError("initial data v is required")
        self.f0, self.phi, self.v = (as_expression(x) for x in (self.f0, self.phi, self.v))
        self.a = float(self.a)
        self.params = dict(self.params or {})

    @property
    def dim(self) -> int:
        return len(self.f)

    def characteristic_field(self) -> CharField:
        """Characteristics of the PDE run along ``dX/ds = -f(s, X)``."""
        return CharField(tuple(as_expression(f"-({c})") for c in self.f), self.names, self.a,
                         "t", self.params)


def solve_first_order_pde(p: FirstOrderPDEProblem, t: float, rho, tol: float = FLOW_TOL,
                          check: bool = True) -> float:
    """``u = v(zeta) e^{int_a^t f0(tau, Z)} + int_a^t phi(tau, Z) e^{int_tau^t f0(xi, Z)} dtau``.

    ``Z(t, tau, rho)`` runs back along the characteristic through ``rho``;
    ``zeta = Z(t, a, rho)``.  Both exponent integrals are accumulated as
    extra states of the same backward flow.  With ``check`` the first
    integrals are also formed independently and must agree with the
    accumulated endpoint.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.shape != (p.dim,):
        raise ValueError(f"point has {rho.size} components, problem has {p.dim}")
    if t < p.a:
        raise ValueError("t must be at least the base time a")
    names = ("t",) + p.names
    v = _compile(p.v, p.names, p.params)
    if t == p.a:
        return float(v(*rho))
    fld = p.characteristic_field()
    F = fld.evaluator()
    f0 = _compile(p.f0, names, p.params)
    phi = _compile(p.phi, names, p.params)
    n = p.dim

    def rhs(s, y):
        X, G = y[:n], y[n]
        dX = F(s, X.reshape(n, 1))[:, 0]
        g = float(f0(s, *X))
        src = float(phi(s, *X))
        out = np.empty(n + 2)
        out[:n] = dX
        out[n] = -g
        out[n + 1] = -src * np.exp(G)
        if not np.all(np.isfinite(out)):
            raise FlowDomainError(f"coefficients are not finite at t={s:.12g}")
        return out

    def big(s, y):
        return 1e12 - np.max(np.abs(y[:n]))
    big.terminal = True
    y0 = np.concatenate([rho, [0.0, 0.0]])
    sol = solve_ivp(rhs, (t, p.a), y0, method="DOP853", rtol=tol, atol=tol, events=big)
    if sol.status != 0:
        raise BlowUpError("characteristic escapes before reaching the base time",
                          float(sol.t[-1]))
    end = sol.y[:, -1]
    zeta, G, H = end[:n], end[n], end[n + 1]
    if check:
        fis = first_integrals(fld, t, rho[None, :], tol)
        gap = float(np.max(np.abs(fis.zeta[0] - zeta)))
        if gap > 1e3 * tol * max(1.0, float(np.max(np.abs(zeta)))):
            raise ArithmeticError(f"characteristic endpoint disagrees with zeta by {gap:.2e}")
    return float(v(*zeta)) * float(np.exp(G)) + float(H)


def first_order_pde_residual(p: FirstOrderPDEProblem, t: float, rho, h: float,
                             tol: float = FLOW_TOL) -> float:
    """``|u_t - phi - f0 u - sum f_i u_{x_i}|`` by second-order central differences."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    names = ("t",) + p.names
    u = lambda s, x: solve_first_order_pde(p, s, x, tol, check=False)  # noqa: E731
    u0 = u(t, rho)
    ut = (u(t + h, rho) - u(t - h, rho)) / (2 * h)
    rhs = float(_compile(p.phi, names, p.params)(t, *rho)) + float(
        _compile(p.f0, names, p.params)(t, *rho)) * u0
    for i, fi in enumerate(p.f):
        e = np.zeros(p.dim)
        e[i] = h
        ux = (u(t, rho + e) - u(t, rho - e)) / (2 * h)
        rhs += float(_compile(fi, names, p.params)(t, *rho)) * ux
    return abs(ut - rhs)


# ---------------------------------------------------------------------------
# parabolic equation


def parabolic_mode_factor(k0: float, k, sigma, t: float) -> float:
    """``exp{t (k0 - sum_i k_i sigma_i^2)}``: growth of the Fourier mode
    ``exp(i sigma . x)`` under ``u_t = k0 u + sum_i k_i u_{x_i x_i}``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if k.shape != sigma.shape:
        raise ValueError("k and sigma must have the same length")
    return float(np.exp(t * (k0 - float(np.sum(k * sigma ** 2)))))


def discrete_symbol(sigma: float, h: float) -> float:
    """Eigenvalue ``(2/h^2)(cos(sigma h) - 1)`` of the second difference."""
    return 2.0 / h ** 2 * (np.cos(sigma * h) - 1.0)


def periodic_second_difference(N: int, length: float = 2 * np.pi) -> np.ndarray:
    h = length / N
    D = -2.0 * np.eye(N) + np.eye(N, k=1) + np.eye(N, k=-1)
    D[0, -1] = D[-1, 0] = 1.0
    return D / h ** 2


def parabolic_grid_crosscheck(k1: float, N: int, t: float, tol: float = 1e-6,
                              modes: Optional[Sequence[int]] = None,
                              engine_tol: float = 1e-12) -> float:
    """Largest error, relative to the input mode's norm, between ``T exp{t k1 D2}`` on sampled modes and
    the discrete Fourier factor ``exp{t k1 (2/h^2)(cos(m h) - 1)}``.

    The grid is periodic on ``[0, 2 pi)`` with ``N`` points; both ``cos(m x)``
    and ``sin(m x)`` are tested for every mode (default ``1 .. N/4``).
    Raises ``ArithmeticError`` when the error exceeds ``tol``.
    """
    if not 2 <= N <= 128:
        raise ValueError("grid size must be between 2 and 128")
    modes = list(range(1, N // 4 + 1)) if modes is None else list(modes)
    h = 2 * np.pi / N
    x = h * np.arange(N)
    D = periodic_second_difference(N)
    E = ordered_exp(ConstantMatrixFunction(k1 * D), 0.0, t, tol=engine_tol)
    worst = 0.0
    for m in modes:
        lam = np.exp(t * k1 * discrete_symbol(m, h))
        for v in (np.cos(m * x), np.sin(m * x)):
            if np.linalg.norm(v) < 1e-12:
                continue
            got = E @ v
            # scaled by the input mode: high modes decay to round-off level
            worst = max(worst, float(np.linalg.norm(got - lam * v) / np.linalg.norm(v)))
    if worst > tol:
        raise ArithmeticError(f"parabolic cross-check error {worst:.2e} exceeds {tol:g}")
    return worst


# ---------------------------------------------------------------------------
# Helmholtz marching


@dataclass(frozen=True)
class TransverseGrid:
    """Uniform interior grid on ``(lo, hi)`` with zero Dirichlet ends."""

    lo: float
    hi: float
    points: int
    var: str = "y"

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("transverse range must satisfy lo < hi")
        if not 1 <= self.points <= 64:
            raise ValueError("transverse grid must have between 1 and 64 points")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.points + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(1, self.points + 1)

    def laplacian(self) -> np.ndarray:
        n = self.points
        D = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
        return D / self.h ** 2


@dataclass
class HelmholtzProblem:
    """``u_xx = -(Delta_2 + eps) u + q`` with ``u = alpha``, ``u_x = beta`` at ``x = a``.

    Without ``transverse`` the problem is one-dimensional and every
    expression is a function of ``x`` only.
    """

    eps: object
    q: object = 0
    alpha: object = 0
    beta: object = 0
    a: float = 0.0
    transverse: Optional[TransverseGrid] = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.eps, self.q, self.alpha, self.beta = (
            as_expression(e) for e in (self.eps, self.q, self.alpha, self.beta))
        self.a = float(self.a)
        self.params = dict(self.params or {})

    @property
    def size(self) -> int:
        return 1 if self.transverse is None else self.transverse.points

    def _sampler(self, e, with_x=True):
        if self.transverse is None:
            names = ("x",) if with_x else ()
            fn = _compile(e, names, self.params)
            return (lambda xs: np.asarray(fn(np.asarray(xs, float)), float)[:, None]) if with_x \
                else (lambda: np.atleast_1d(np.asarray(fn(), float)))
        ys = self.transverse.nodes
        names = ("x", self.transverse.var) if with_x else (self.transverse.var,)
        fn = _compile(e, names, self.params)
        if with_x:
            return lambda xs: np.asarray(fn(np.asarray(xs, float)[:, None], ys[None, :]), float)
        return lambda: np.asarray(fn(ys), float)

    def generator(self):
        """Block generator ``[[0, I], [-(Delta_2 + eps(x)), 0]]``."""
        n = self.size
        lap = np.zeros((n, n)) if self.transverse is None else self.transverse.laplacian()
        eps = self._sampler(self.eps)

        def gen(xs):
            xs = np.atleast_1d(np.asarray(xs, float))
            out = np.zeros((xs.size, 2 * n, 2 * n))
            out[:, :n, n:] = np.eye(n)
            e = eps(xs)
            out[:, n:, :n] = -lap[None, :, :]
            idx = np.arange(n)
            out[:, n + idx, idx] -= e
            return out
        return CallableMatrixFunction(gen, 2 * n)

    def source(self):
        n = self.size
        q = self._sampler(self.q)

        def src(xs):
            xs = np.atleast_1d(np.asarray(xs, float))
            out = np.zeros((xs.size, 2 * n))
            out[:, n:] = q(xs)
            return out
        return src

    def initial(self) -> np.ndarray:
        alpha = np.broadcast_to(self._sampler(self.alpha, with_x=False)(), (self.size,))
        beta = np.broadcast_to(self._sampler(self.beta, with_x=False)(), (self.size,))
        return np.concatenate([alpha, beta]).astype(float)


@dataclass
class HelmholtzSolution:
    x: float
    u: np.ndarray
    ux: np.ndarray
    y: Optional[np.ndarray]


def _augmented_generator(p: HelmholtzProblem) -> CallableMatrixFunction:
    """``[[G(x), (0, q(x))], [0, 0]]`` acting on ``(u, u_x, 1)``."""
    n = p.size
    G = p.generator()
    src = p.source()

    def gen(xs):
        xs = np.atleast_1d(np.asarray(xs, float))
        out = np.zeros((xs.size, 2 * n + 1, 2 * n + 1))
        out[:, :2 * n, :2 * n] = G.batch(xs)
        out[:, :2 * n, 2 * n] = src(xs)
        return out
    return CallableMatrixFunction(gen, 2 * n + 1)


def _march(p: HelmholtzProblem, xs, tol: float) -> np.ndarray:
    """States ``(u, u_x)`` at the increasing points ``xs`` (all ``>= a``)."""
    gen = _augmented_generator(p)
    state = np.concatenate([p.initial(), [1.0]])
    out, prev = [], p.a
    for x in xs:
        if x > prev:
            state = ordered_exp(gen, prev, x, "T", 1.0, tol=tol) @ state
            prev = x
        out.append(state[:-1].copy())
    return np.array(out)


def solve_helmholtz_march(p: HelmholtzProblem, x: float, tol: float = 1e-10) -> HelmholtzSolution:
    """March the Cauchy data from ``a`` to ``x`` as the first-order system
    ``(u, u_x)' = [[0, I], [-(Delta_2 + eps), 0]] (u, u_x) + (0, q)``.

    The state ``(u, u_x)`` carries the same information as the pair of
    auxiliary parameters multiplying ``u`` and ``u_x``: the marched
    combination is linear in them, so differentiating by either parameter
    recovers a block of this system.  The source enters through a constant
    extra state, so the whole march is one ordered exponential; this is the
    variation-of-constants solution and stays well conditioned when
    evanescent transverse modes grow by many orders of magnitude.
    """
    if x < p.a:
        raise ValueError("marching requires x >= a")
    n = p.size
    y = None if p.transverse is None else p.transverse.nodes
    s = _march(p, [float(x)], tol)[0]
    return HelmholtzSolution(float(x), s[:n].copy(), s[n:].copy(), y)


def helmholtz_residual(p: HelmholtzProblem, x: float, h: float, tol: float = 1e-12) -> float:
    """Max of ``|u_xx + (Delta_2 + eps) u - q|`` with a central difference in ``x``,
    scaled by ``max(1, |u|)``."""
    if x - h < p.a:
        raise ValueError("stencil must stay inside [a, x + h]")
    S = _march(p, [x - h, x, x + h], tol)
    n = p.size
    u = S[:, :n]
    uxx = (u[2] - 2 * u[1] + u[0]) / h ** 2
    lap = np.zeros((n, n)) if p.transverse is None else p.transverse.laplacian()
    eps = p._sampler(p.eps)(np.array([x]))[0]
    q = p._sampler(p.q)(np.array([x]))[0]
    scale = max(1.0, float(np.max(np.abs(u[1]))))
    return float(np.max(np.abs(uxx + lap @ u[1] + eps * u[1] - q))) / scale


# ---------------------------------------------------------------------------
# systems of first-order PDEs


class MatrixField2D:
    """Square matrix of expressions in two variables (default ``x``, ``y``)."""

    def __init__(self, entries, vars: Sequence[str] = ("x", "y"),
                 params: Mapping[str, float] | None = None):
        rows = [list(r) for r in entries]
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError("matrix entries must form a non-empty square table")
        self.dim = n
        self.vars = tuple(vars)
        self.params = dict(params or {})
        self.entries = [[as_expression(e) for e in r] for r in rows]
        self._fns = [[_compile(e, self.vars, self.params) for e in r] for r in self.entries]

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.empty(x.shape + (self.dim, self.dim))
        for i, row in enumerate(self._fns):
            for j, fn in enumerate(row):
                out[..., i, j] = fn(x, y)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("matrix field produced non-finite entries")
        return out

    def derivative(self, var: str) -> "MatrixField2D":
        return MatrixField2D([[differentiate(e, var) for e in r] for r in self.entries],
                             self.vars, self.params)

    def partial(self, which: int) -> "MatrixField2D":
        return self.derivative(self.vars[which])

    def along_first(self, y: float) -> CallableMatrixFunction:
        """``s -> M(s, y)`` as a one-variable matrix function."""
        return CallableMatrixFunction(lambda ts: self(np.atleast_1d(ts), np.full(np.size(ts), y)),
                                      self.dim)

    def along_second(self, x: float) -> CallableMatrixFunction:
        return CallableMatrixFunction(lambda ts: self(np.full(np.size(ts), x), np.atleast_1d(ts)),
                                      self.dim)

    @classmethod
    def constant(cls, M, vars=("x", "y")) -> "MatrixField2D":
        M = np.asarray(M, float)
        return cls([[repr(float(v)) for v in r] for r in M], vars)


def _as_field2d(M) -> object:
    if isinstance(M, MatrixField2D) or callable(M):
        return M
    arr = np.asarray(M, dtype=object)
    if arr.dtype == object and any(isinstance(v, (str, Expression)) for v in arr.ravel()):
        return MatrixField2D(M)
    return MatrixField2D.constant(np.asarray(M, float))


@dataclass
class PDESystemProblem:
    """``u_x = A(x, y) u``, ``u_y = B(x, y) u`` with ``u(a, b) = c``."""

    A: object
    B: object
    a: float = 0.0
    b: float = 0.0
    c: Sequence[float] = ()

    def __post_init__(self):
        self.A, self.B = _as_field2d(self.A), _as_field2d(self.B)
        self.c = np.asarray(self.c, dtype=float)
        da, db = _dim(self.A), _dim(self.B)
        if da != db or (self.c.size and self.c.shape != (da,)):
            raise ValueError("A, B and c must have matching dimensions")


def _dim(M) -> int:
    if hasattr(M, "dim"):
        return int(M.dim)
    return int(np.asarray(M(0.0, 0.0)).shape[-1])


def _partial(M, which: int, x, y, h: float = 3e-3):
    """Partial derivative: symbolic for expression fields, else a 5-point stencil."""
    if isinstance(M, MatrixField2D):
        return M.partial(which)(x, y)
    e = (h, 0.0) if which == 0 else (0.0, h)
    f = lambda k: np.asarray(M(x + k * e[0], y + k * e[1]), float)  # noqa: E731
    return (-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / (12 * h)


@dataclass
class ConsistencyReport:
    """Largest Frobenius norm of ``[A, B] + dA/dy - dB/dx`` over the samples."""

    max_residual: float
    at: tuple
    samples: int
    gate: float = CONSISTENCY_GATE

    @property
    def consistent(self) -> bool:
        return self.max_residual <= self.gate

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "at": list(self.at), "samples": self.samples,
                "gate": self.gate, "consistent": self.consistent}


class InconsistentSystemError(ValueError):
    """The pair (A, B) violates the zero-curvature condition."""

    def __init__(self, report: ConsistencyReport):
        super().__init__(f"consistency residual {report.max_residual:.3g} at {report.at} "
                         f"exceeds {report.gate:g}")
        self.report = report


def check_consistency(p: PDESystemProblem, xs: Sequence[float], ys: Sequence[float],
                      gate: float = CONSISTENCY_GATE) -> ConsistencyReport:
    """Max over the grid ``xs x ys`` of ``|[A,B] + dA/dy - dB/dx|_F``."""
    worst, at = -1.0, (None, None)
    for x in xs:
        for y in ys:
            A = np.asarray(p.A(x, y), float)
            B = np.asarray(p.B(x, y), float)
            R = A @ B - B @ A + _partial(p.A, 1, x, y) - _partial(p.B, 0, x, y)
            r = float(np.linalg.norm(R))
            if r > worst:
                worst, at = r, (float(x), float(y))
    return ConsistencyReport(worst, at, len(xs) * len(ys), gate)


class CompatibleB:
    """``B(x, y)`` completing ``A`` so that the pair is consistent.

    ``B = U(x) [B(a, y) + int_a^x U(tau)^{-1} dA/dy(tau, y) U(tau) dtau] U(x)^{-1}``
    with ``U(s) = T exp{int_a^s A(tau, y) dtau}``.
    """

    def __init__(self, A, B_at_a, a: float = 0.0, tol: float = 1e-12, y_var: str = "y"):
        self.A = _as_field2d(A)
        self.a, self.tol = float(a), float(tol)
        self.dim = _dim(self.A)
        if isinstance(B_at_a, MatrixField2D):
            # a two-variable seed is read on the line x = a
            self._B0 = lambda y, f=B_at_a: f(self.a, y)
        elif callable(B_at_a):
            self._B0 = B_at_a
        else:
            arr = np.asarray(B_at_a, dtype=object)
            if arr.dtype == object and any(isinstance(v, (str, Expression)) for v in arr.ravel()):
                f = MatrixField2D(B_at_a, (y_var, "_unused"))
                self._B0 = lambda y, f=f: f(y, 0.0)
            else:
                M = np.asarray(B_at_a, float)
                self._B0 = lambda y, M=M: M
        self._Ay = self.A.partial(1) if isinstance(self.A, MatrixField2D) else None

    def B_at_a(self, y: float) -> np.ndarray:
        return np.asarray(self._B0(y), float)

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.empty(x.shape + (self.dim, self.dim))
        for idx in np.ndindex(x.shape):
            out[idx] = self._point(float(x[idx]), float(y[idx]))
        return out

    def _Ay_at(self, ts, y):
        if self._Ay is not None:
            return self._Ay(ts, np.full(ts.shape, y))
        return np.stack([_partial(self.A, 1, s, y) for s in ts])

    def _point(self, x: float, y: float) -> np.ndarray:
        B0 = self.B_at_a(y)
        if x == self.a:
            return B0.copy()
        lo, hi = min(self.a, x), max(self.a, x)
        gen = self.A.along_first(y) if isinstance(self.A, MatrixField2D) else \
            CallableMatrixFunction(lambda ts: np.stack([self.A(s, y) for s in np.atleast_1d(ts)]),
                                   self.dim)
        if x > self.a:
            U = DenseOrderedExp(gen, lo, hi, "T", 1.0, tol=self.tol)
            Ux = U.end

            def Uat(ts):
                return U.from_start(ts)
        else:
            # U(s) for s < a is the T0 propagator of -A on [s, a] read from the right end
            U = DenseOrderedExp(gen, lo, hi, "T0", -1.0, tol=self.tol)
            Ux = U.to_end(np.array([x]))[0]

            def Uat(ts):
                return U.to_end(ts)

        def integrand(ts):
            Us = Uat(ts)
            return np.linalg.solve(Us, self._Ay_at(np.asarray(ts, float), y) @ Us)

        val, _ = integrate(integrand, self.a, x, tol=self.tol * 10)
        return Ux @ (B0 + val) @ np.linalg.inv(Ux)


def construct_compatible_B(A, B_at_a, x: float, y: float, a: float = 0.0,
                           tol: float = 1e-12) -> np.ndarray:
    """Value at ``(x, y)`` of the field ``B`` that makes ``(A, B)`` consistent."""
    return CompatibleB(A, B_at_a, a, tol)(x, y)


def _sample_grid(lo: float, hi: float, k: int = 5) -> np.ndarray:
    if lo == hi:
        return np.array([lo])
    return np.linspace(min(lo, hi), max(lo, hi), k)


def solve_pde_system(p: PDESystemProblem, x: float, y: float, tol: float = 1e-12,
                     gate: float = CONSISTENCY_GATE,
                     report: Optional[ConsistencyReport] = None) -> np.ndarray:
    """``u = T exp{int_a^x A(tau, y)} T exp{int_b^y B(a, zeta)} c``.

    The pair is first checked on a 5 x 5 grid spanning ``[a, x] x [b, y]``;
    a residual above ``gate`` raises :class:`InconsistentSystemError`
    carrying the report.
    """
    if p.c.size == 0:
        raise ValueError("initial vector c is required")
    rep = report or check_consistency(p, _sample_grid(p.a, x), _sample_grid(p.b, y), gate)
    if rep.max_residual > gate:
        raise InconsistentSystemError(rep)
    return _system_value(p, x, y, tol)


def _along_second(M, x, dim):
    if isinstance(M, MatrixField2D):
        return M.along_second(x)
    return CallableMatrixFunction(lambda ts: np.stack([M(x, s) for s in np.atleast_1d(ts)]), dim)


def _along_first(M, y, dim):
    if isinstance(M, MatrixField2D):
        return M.along_first(y)
    return CallableMatrixFunction(lambda ts: np.stack([M(s, y) for s in np.atleast_1d(ts)]), dim)


def _system_value(p: PDESystemProblem, x: float, y: float, tol: float) -> np.ndarray:
    n = p.c.size
    V = ordered_exp(_along_second(p.B, p.a, n), p.b, y, "T", 1.0, tol=tol)
    U = ordered_exp(_along_first(p.A, y, n), p.a, x, "T", 1.0, tol=tol)
    return U @ (V @ p.c)


def pde_system_residual(p: PDESystemProblem, x: float, y: float, h: float,
                        tol: float = 1e-13) -> dict:
    """Central-difference residuals at ``(x, y)``.

    ``x_equation`` and ``y_equation`` are ``|D_x u - A u|`` and
    ``|D_y u - B u|``; ``mixed_symmetry`` is ``|D_y (A u) - D_x (B u)|``,
    the two routes to ``u_xy``.  All three are ``O(h^2)`` for a consistent
    pair.
    """
    u = lambda s, r: _system_value(p, s, r, tol)  # noqa: E731
    A = lambda s, r: np.asarray(p.A(s, r), float)  # noqa: E731
    B = lambda s, r: np.asarray(p.B(s, r), float)  # noqa: E731
    u0 = u(x, y)
    uxp, uxm, uyp, uym = u(x + h, y), u(x - h, y), u(x, y + h), u(x, y - h)
    rx = float(np.linalg.norm((uxp - uxm) / (2 * h) - A(x, y) @ u0))
    ry = float(np.linalg.norm((uyp - uym) / (2 * h) - B(x, y) @ u0))
    dy_Au = (A(x, y + h) @ uyp - A(x, y - h) @ uym) / (2 * h)
    dx_Bu = (B(x + h, y) @ uxp - B(x - h, y) @ uxm) / (2 * h)
    return {"x_equation": rx, "y_equation": ry,
            "mixed_symmetry": float(np.linalg.norm(dy_Au - dx_Bu))}
