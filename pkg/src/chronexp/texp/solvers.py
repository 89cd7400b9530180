"""Solvers assembled from ordered exponentials.

* inhomogeneous linear systems  u' = L(t) u + phi(t)
* the two-sided operator equation  K' = a K + K c + b
* derivative of an ordered exponential with respect to a parameter
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..expr import as_expression
from .matfun import ChebyshevMatrixFunction, ExprMatrixFunction, MatrixFunction, as_matrix_function
from .product import DenseOrderedExp
from .quadrature import ChebyshevAntiderivative

__all__ = [
    "as_vector_function",
    "solve_linear_inhomogeneous",
    "LinearSolution",
    "solve_operator_sylvester",
    "SylvesterSolution",
    "parameter_derivative",
]

# dense propagators are built this much tighter than the requested tolerance
_INNER = 1e-2


def _inner_tol(tol: float) -> float:
    return max(tol * _INNER, 1e-14)


def as_vector_function(phi, n: int, var: str = "t") -> Callable[[np.ndarray], np.ndarray]:
    """Turn expressions, constants or a callable into ``f(ts) -> (len(ts), n)``."""
    if phi is None:
        return lambda ts: np.zeros((np.size(ts), n))
    if callable(phi) and not isinstance(phi, (str, bytes)):
        return lambda ts: np.asarray(phi(np.atleast_1d(ts)), dtype=float).reshape(np.size(ts), n)
    items = list(phi)
    if len(items) != n:
        raise ValueError(f"source has {len(items)} components, expected {n}")
    if all(isinstance(x, (int, float, np.floating)) for x in items):
        vec = np.asarray(items, dtype=float)
        return lambda ts: np.broadcast_to(vec, (np.size(ts), n)).copy()
    exprs = [as_expression(x) for x in items]
    for e in exprs:
        if set(e.variables) - {var}:
            raise ValueError(f"source component {e} depends on names other than {var!r}")
    fns = [e.compile((var,)) for e in exprs]

    def f(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((ts.size, n))
        for i, fn in enumerate(fns):
            out[:, i] = fn(ts)
        return out

    return f


class LinearSolution:
    """Dense solution of ``u' = L u + phi``, ``u(a) = v`` on ``[a, b]``.

    ``u(s) = X(s) [v + int_a^s X(r)^{-1} phi(r) dr]`` with ``X`` the
    T-ordered propagator from ``a``.
    """

    def __init__(self, L, phi, v, a: float, b: float, tol: float = 1e-10):
        L = as_matrix_function(L)
        v = np.asarray(v, dtype=float)
        if v.shape != (L.dim,):
            raise ValueError(f"initial vector has shape {v.shape}, expected ({L.dim},)")
        if not b > a:
            raise ValueError("dense solution needs b > a")
        self.L, self.v, self.a, self.b, self.tol = L, v, float(a), float(b), float(tol)
        self.phi = as_vector_function(phi, L.dim)
        inner = _inner_tol(tol)
        self.prop = DenseOrderedExp(L, a, b, "T", 1.0, tol=inner)

        def integrand(ts):
            return np.linalg.solve(self.prop.from_start(ts), self.phi(ts)[..., None])[..., 0]

        fit = ChebyshevMatrixFunction.fit(integrand, self.a, self.b, tol=inner)
        self._anti = ChebyshevAntiderivative(self.a, self.b, fit.values)

    def __call__(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        X = self.prop.from_start(ts)
        inner = self.v[None, :] + self._anti(ts)
        return np.einsum("kij,kj->ki", X, inner)

    def derivative(self, ts) -> np.ndarray:
        """Right-hand side ``L u + phi`` evaluated on the dense solution."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return np.einsum("kij,kj->ki", self.L.batch(ts), self(ts)) + self.phi(ts)


def solve_linear_inhomogeneous(L, phi, v, a: float, t: float, tol: float = 1e-10) -> np.ndarray:
    """``T exp{int_a^t L} v + int_a^t T exp{int_s^t L} phi(s) ds``.

    Parameters
    ----------
    L : generator (MatrixFunction, constant matrix or expression table)
    phi : source; expressions in ``t``, numbers, a callable or ``None``
    v : initial vector at ``a``
    """
    L = as_matrix_function(L)
    v = np.asarray(v, dtype=float)
    if t == a:
        return v.copy()
    if t < a:
        raise ValueError("solve_linear_inhomogeneous expects t >= a")
    return LinearSolution(L, phi, v, a, t, tol)(np.array([t]))[0]


class SylvesterSolution:
    """Dense solution of ``K' = a K + K c + b`` with ``K(t0) = K0``.

    ``K(s) = Xa(s) [K0 + int Xa^{-1} b Wc^{-1}] Wc(s)`` where ``Xa`` is the
    T-ordered exponential of ``a`` and ``Wc`` the T0-ordered exponential of
    ``c`` (so ``Wc^{-1}`` is the T-ordered exponential of ``-c``).
    """

    def __init__(self, a_fn, b_fn, c_fn, K0, t0: float, t1: float, tol: float = 1e-10):
        a_fn, b_fn, c_fn = (as_matrix_function(x) for x in (a_fn, b_fn, c_fn))
        K0 = np.asarray(K0, dtype=float)
        n = a_fn.dim
        if b_fn.dim != n or c_fn.dim != n or K0.shape != (n, n):
            raise ValueError("a, b, c and K0 must share one dimension")
        if not t1 > t0:
            raise ValueError("dense solution needs t1 > t0")
        self.a_fn, self.b_fn, self.c_fn, self.K0 = a_fn, b_fn, c_fn, K0
        self.t0, self.t1 = float(t0), float(t1)
        inner = _inner_tol(tol)
        self.Xa = DenseOrderedExp(a_fn, t0, t1, "T", 1.0, tol=inner)
        self.Wc = DenseOrderedExp(c_fn, t0, t1, "T0", 1.0, tol=inner)

        def integrand(ts):
            left = self.Xa.inverse_from_start(ts)
            right = self.Wc.inverse_from_start(ts)
            return left @ b_fn.batch(ts) @ right

        fit = ChebyshevMatrixFunction.fit(integrand, self.t0, self.t1, tol=inner)
        self._anti = ChebyshevAntiderivative(self.t0, self.t1, fit.values)

    def __call__(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        mid = self.K0[None] + self._anti(ts)
        return self.Xa.from_start(ts) @ mid @ self.Wc.from_start(ts)

    def rhs(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        K = self(ts)
        return self.a_fn.batch(ts) @ K + K @ self.c_fn.batch(ts) + self.b_fn.batch(ts)


def solve_operator_sylvester(a_fn, b_fn, c_fn, K0, t0: float, t: float,
                             tol: float = 1e-10) -> np.ndarray:
    """Value at ``t`` of the solution of ``K' = a K + K c + b``, ``K(t0) = K0``."""
    K0 = np.asarray(K0, dtype=float)
    if t == t0:
        return K0.copy()
    if t < t0:
        raise ValueError("solve_operator_sylvester expects t >= t0")
    return SylvesterSolution(a_fn, b_fn, c_fn, K0, t0, t, tol)(np.array([t]))[0]


def parameter_derivative(
    family,
    a: float,
    t: float,
    alpha0: float,
    param: str = "alpha",
    derivative: Optional[MatrixFunction] = None,
    tol: float = 1e-10,
) -> np.ndarray:
    """Derivative in a parameter of ``T exp{int_a^t A(s, alpha)}`` at ``alpha0``.

    Evaluates ``X(t) int_a^t X(s)^{-1} dA/dalpha(s) X(s) ds``.

    Parameters
    ----------
    family : ExprMatrixFunction with a parameter named ``param``, or a
        callable ``alpha -> MatrixFunction``
    derivative : dA/dalpha as a MatrixFunction; computed symbolically
        when ``family`` is an ExprMatrixFunction and this is omitted
    """
    if isinstance(family, ExprMatrixFunction):
        A = family.with_params(**{param: alpha0})
        if derivative is None:
            derivative = family.derivative(param).with_params(**{param: alpha0})
    else:
        A = as_matrix_function(family(alpha0))
        if derivative is None:
            raise ValueError("a callable family needs an explicit derivative")
    dA = as_matrix_function(derivative)
    if t == a:
        return np.zeros((A.dim, A.dim))
    if t < a:
        raise ValueError("parameter_derivative expects t >= a")
    inner = _inner_tol(tol)
    X = DenseOrderedExp(A, a, t, "T", 1.0, tol=inner)

    def integrand(ts):
        Xs = X.from_start(ts)
        return np.linalg.solve(Xs, dA.batch(ts) @ Xs)

    fit = ChebyshevMatrixFunction.fit(integrand, a, t, tol=inner)
    total = ChebyshevAntiderivative(a, t, fit.values)(np.array([t]))[0]
    return X.end @ total
