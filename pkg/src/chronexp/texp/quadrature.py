"""Quadrature helpers: Gauss-Legendre rules and Chebyshev antiderivatives."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.fft import dct

__all__ = [
    "gauss_legendre",
    "integrate",
    "QuadratureError",
    "cheb_coefficients",
    "ChebyshevAntiderivative",
]


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to meet its tolerance."""


@lru_cache(maxsize=64)
def _leggauss(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(a: float, b: float, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``q``-point Gauss-Legendre rule on ``[a, b]``."""
    x, w = _leggauss(int(q))
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def integrate(
    fn: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    q0: int = 16,
    qmax: int = 1024,
    panels: int = 1,
):
    """Integrate a vectorised ``fn(ts) -> (len(ts), ...)`` over ``[a, b]``.

    The rule is doubled until successive estimates agree to
    ``tol * max(1, |I|)``.  Returns ``(value, error_estimate)``.
    """
    if a == b:
        probe = np.asarray(fn(np.array([a])))
        return np.zeros(probe.shape[1:]), 0.0
    edges = np.linspace(a, b, panels + 1)
    q = q0
    prev = None
    while True:
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            x, w = gauss_legendre(lo, hi, q)
            vals = np.asarray(fn(x), dtype=float)
            total = total + np.tensordot(w, vals, axes=(0, 0))
        if prev is not None:
            err = float(np.max(np.abs(total - prev)))
            if err <= tol * max(1.0, float(np.max(np.abs(total)))):
                return total, err
        if 2 * q > qmax:
            if prev is None:
                raise QuadratureError("quadrature budget too small")
            raise QuadratureError(f"quadrature did not converge (last change {err:.2e})")
        prev = total
        q *= 2


def cheb_coefficients(values: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients from samples at increasing Lobatto nodes.

    ``values`` has shape ``(n + 1, ...)``; sampling order is ``-cos(pi k/n)``.
    """
    v = np.asarray(values, dtype=float)[::-1]  # to the cos(pi k/n) ordering
    n = v.shape[0] - 1
    c = dct(v, type=1, axis=0) / n
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


class ChebyshevAntiderivative:
    """Antiderivative on ``[a, b]`` (zero at ``a``) of a Lobatto interpolant."""

    def __init__(self, a: float, b: float, values: np.ndarray):
        self.a, self.b = float(a), float(b)
        c = cheb_coefficients(values)
        shape = c.shape[1:]
        flat = c.reshape(c.shape[0], -1)
        half = 0.5 * (self.b - self.a)
        ci = C.chebint(flat, m=1, lbnd=-1.0, axis=0) * half
        self._shape = shape
        self._coef = ci

    def __call__(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        x = (2.0 * ts - self.a - self.b) / (self.b - self.a)
        out = C.chebval(x, self._coef)  # shape (k, len(ts))
        return np.moveaxis(out, -1, 0).reshape((ts.size,) + self._shape)
