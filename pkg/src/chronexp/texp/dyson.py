"""Truncated Dyson series by nested Gauss-Legendre quadrature on the simplex."""

from __future__ import annotations

import numpy as np

from .matfun import MatrixFunction, as_matrix_function
from .quadrature import _leggauss

__all__ = ["dyson_partial_sum", "dyson_term", "simplex_nodes", "QuadratureBudgetError"]

DEFAULT_BUDGET = 2 ** 24
_CHUNK = 2 ** 18


class QuadratureBudgetError(ValueError):
    """Requested quadrature is invalid or larger than the allowed budget."""


def _unit_rule(q: int):
    x, w = _leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def simplex_nodes(a: float, t: float, m: int, q: int, increasing: bool = False):
    """Collapsed-coordinate Gauss nodes for ``t >= tau_1 >= ... >= tau_m >= a``.

    Returns ``(taus, weights)`` with ``taus`` of shape ``(q**m, m)``.  With
    ``increasing=True`` the chain is ``a <= tau_1 <= ... <= tau_m <= t``.
    The rule is exact for polynomials of degree ``2q - 1`` in each
    collapsed coordinate.
    """
    x, w = _unit_rule(q)
    taus = np.empty((1, 0))
    weights = np.ones(1)
    upper = np.full(1, float(t))
    lower = np.full(1, float(a))
    for _ in range(m):
        if increasing:
            # next node lies in [previous, t]
            span = t - lower
            nxt = lower[:, None] + span[:, None] * x[None, :]
        else:
            span = upper - a
            nxt = a + span[:, None] * x[None, :]
        weights = (weights[:, None] * span[:, None] * w[None, :]).ravel()
        taus = np.concatenate([np.repeat(taus, q, axis=0), nxt.reshape(-1, 1)], axis=1)
        upper = nxt.ravel()
        lower = nxt.ravel()
    return taus, weights


def _nested(gen: MatrixFunction, a: float, tops: np.ndarray, depth: int,
            x: np.ndarray, w: np.ndarray, direction: str) -> np.ndarray:
    """For each ``s`` in ``tops`` the depth-fold ordered integral over
    ``s >= tau_1 >= ... >= tau_depth >= a``."""
    q = x.size
    n = gen.dim
    out = np.empty((tops.size, n, n))
    per = max(1, _CHUNK // q ** depth)
    for lo in range(0, tops.size, per):
        s = tops[lo:lo + per]
        span = s - a
        nodes = a + span[:, None] * x[None, :]
        vals = gen.batch(nodes.ravel()).reshape(s.size, q, n, n)
        if depth > 1:
            inner = _nested(gen, a, nodes.ravel(), depth - 1, x, w, direction)
            inner = inner.reshape(s.size, q, n, n)
            vals = vals @ inner if direction == "T" else inner @ vals
        out[lo:lo + per] = np.einsum("pq,pqij->pij", span[:, None] * w[None, :], vals)
    return out


def dyson_term(gen, a: float, t: float, m: int, quad_points: int = 16,
               direction: str = "T", budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """The m-fold ordered integral of generator products (no sign applied)."""
    gen = as_matrix_function(gen)
    if m < 0:
        raise ValueError("term index must be non-negative")
    if m == 0:
        return np.eye(gen.dim)
    q = int(quad_points)
    if q < 1:
        raise QuadratureBudgetError("need at least one quadrature point per axis")
    if q ** m > budget:
        raise QuadratureBudgetError(
            f"order {m} with {q} points per axis needs {q ** m} nodes (budget {budget})"
        )
    x, w = _unit_rule(q)
    return _nested(gen, float(a), np.array([float(t)]), m, x, w, direction)[0]


def dyson_partial_sum(gen, a: float, t: float, order: int, quad_points: int = 16,
                      direction: str = "T", sign: float = 1.0,
                      budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """``1 + sum_{m=1..order} sign**m * I_m`` with ``I_m`` the m-fold ordered
    integral; direction ``T`` puts the latest time leftmost, ``T0`` rightmost.
    """
    gen = as_matrix_function(gen)
    if order < 0:
        raise ValueError("order must be non-negative")
    if direction not in ("T", "T0"):
        raise ValueError("direction must be 'T' or 'T0'")
    if quad_points < 1 or (order > 0 and quad_points ** order > budget):
        raise QuadratureBudgetError(
            f"quadrature with {quad_points} points per axis at order {order} exceeds budget"
        )
    if t < a:
        # backward interval: the other ordering with the opposite sign
        flipped = "T0" if direction == "T" else "T"
        return dyson_partial_sum(gen, t, a, order, quad_points, flipped, -sign, budget)
    total = np.eye(gen.dim)
    for m in range(1, order + 1):
        total = total + (sign ** m) * dyson_term(gen, a, t, m, quad_points, direction, budget)
    return total
