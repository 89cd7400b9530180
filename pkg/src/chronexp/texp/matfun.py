"""Matrix-valued functions of one real variable.

Every generator handed to the ordered-exponential engine implements the
small protocol below: ``dim``, ``batch(ts)`` returning a stack of shape
``(len(ts), dim, dim)``, ``__call__(t)`` for a single time, and
``breakpoints`` listing interior times where the function may jump.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..expr import Expression, as_expression, differentiate

__all__ = [
    "MatrixFunction",
    "ExprMatrixFunction",
    "ConstantMatrixFunction",
    "PiecewiseConstantMatrixFunction",
    "CallableMatrixFunction",
    "ChebyshevMatrixFunction",
    "as_matrix_function",
    "lobatto_nodes",
    "barycentric_weights",
    "barycentric_eval",
]


class MatrixFunction:
    """Base class: subclasses implement :meth:`batch`."""

    dim: int
    breakpoints: tuple = ()

    def batch(self, ts) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, t: float) -> np.ndarray:
        return self.batch(np.array([float(t)]))[0]

    # light algebra so compound generators can be assembled in place
    def __add__(self, other: "MatrixFunction") -> "MatrixFunction":
        return CallableMatrixFunction(
            lambda ts, f=self, g=other: f.batch(ts) + g.batch(ts),
            self.dim,
            breakpoints=_merge_breaks(self, other),
        )

    def __sub__(self, other: "MatrixFunction") -> "MatrixFunction":
        return CallableMatrixFunction(
            lambda ts, f=self, g=other: f.batch(ts) - g.batch(ts),
            self.dim,
            breakpoints=_merge_breaks(self, other),
        )

    def __neg__(self) -> "MatrixFunction":
        return self.scaled(-1.0)

    def scaled(self, c: float) -> "MatrixFunction":
        return CallableMatrixFunction(
            lambda ts, f=self: c * f.batch(ts), self.dim, breakpoints=self.breakpoints
        )

    def __matmul__(self, other: "MatrixFunction") -> "MatrixFunction":
        return CallableMatrixFunction(
            lambda ts, f=self, g=other: f.batch(ts) @ g.batch(ts),
            self.dim,
            breakpoints=_merge_breaks(self, other),
        )


def _merge_breaks(*fs) -> tuple:
    out = sorted({float(b) for f in fs for b in getattr(f, "breakpoints", ())})
    return tuple(out)


def _as_ts(ts) -> np.ndarray:
    return np.atleast_1d(np.asarray(ts, dtype=float))


class ExprMatrixFunction(MatrixFunction):
    """Matrix whose entries are expressions in one variable plus parameters.

    Parameters
    ----------
    entries : n x n nested sequence of expression strings or Expressions
    var : name of the running variable (default ``"t"``)
    params : fixed values for any other names appearing in the entries
    """

    def __init__(self, entries, var: str = "t", params: Mapping[str, float] | None = None):
        rows = [list(r) for r in entries]
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError("matrix entries must form a non-empty square table")
        self.dim = n
        self.var = var
        self.params = dict(params or {})
        self.entries = [[as_expression(e) for e in r] for r in rows]
        names = (var,) + tuple(sorted(self.params))
        for r in self.entries:
            for e in r:
                extra = set(e.variables) - set(names)
                if extra:
                    raise ValueError(f"unbound name(s) {sorted(extra)} in matrix entry {e}")
        self._fns = [[e.compile(names) for e in r] for r in self.entries]
        self._pvals = tuple(self.params[k] for k in sorted(self.params))
        self.breakpoints = ()

    def batch(self, ts) -> np.ndarray:
        ts = _as_ts(ts)
        out = np.empty((ts.size, self.dim, self.dim))
        with np.errstate(all="ignore"):
            for i, row in enumerate(self._fns):
                for j, fn in enumerate(row):
                    out[:, i, j] = fn(ts, *self._pvals)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("matrix function produced non-finite entries")
        return out

    def with_params(self, **params) -> "ExprMatrixFunction":
        merged = {**self.params, **params}
        return ExprMatrixFunction(self.entries, self.var, merged)

    def derivative(self, name: str) -> "ExprMatrixFunction":
        """Entrywise symbolic derivative with respect to ``name``."""
        d = [[differentiate(e, name) for e in r] for r in self.entries]
        return ExprMatrixFunction(d, self.var, self.params)

    def along(self, var: str, fixed: Mapping[str, float]) -> "ExprMatrixFunction":
        """Re-read the entries as functions of ``var`` with other names fixed."""
        params = {**self.params, **fixed}
        params.pop(var, None)
        if self.var != var and self.var not in params:
            raise ValueError(f"value for {self.var!r} must be supplied in 'fixed'")
        return ExprMatrixFunction(self.entries, var, params)

    def to_strings(self) -> list[list[str]]:
        return [[str(e) for e in r] for r in self.entries]


class ConstantMatrixFunction(MatrixFunction):
    def __init__(self, M):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("constant generator must be square")
        self.M = M
        self.dim = M.shape[0]
        self.breakpoints = ()

    def batch(self, ts) -> np.ndarray:
        ts = _as_ts(ts)
        return np.broadcast_to(self.M, (ts.size,) + self.M.shape).copy()


class PiecewiseConstantMatrixFunction(MatrixFunction):
    """Constant matrices on contiguous half-open segments ``[e_k, e_{k+1})``.

    The last segment is closed on the right.  Times outside the edge range
    take the nearest segment value.
    """

    def __init__(self, edges: Sequence[float], matrices: Sequence):
        edges = np.asarray(edges, dtype=float)
        mats = np.asarray(matrices, dtype=float)
        if edges.ndim != 1 or edges.size != mats.shape[0] + 1:
            raise ValueError("need len(edges) == len(matrices) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("segment edges must be strictly increasing")
        self.edges = edges
        self.mats = mats
        self.dim = mats.shape[1]
        self.breakpoints = tuple(float(e) for e in edges[1:-1])

    def batch(self, ts) -> np.ndarray:
        ts = _as_ts(ts)
        idx = np.searchsorted(self.edges, ts, side="right") - 1
        idx = np.clip(idx, 0, len(self.mats) - 1)
        return self.mats[idx].copy()


class CallableMatrixFunction(MatrixFunction):
    """Wrap a vectorised callable ``fn(ts) -> (len(ts), n, n)``."""

    def __init__(self, fn: Callable, dim: int, breakpoints: Sequence[float] = ()):
        self.fn = fn
        self.dim = int(dim)
        self.breakpoints = tuple(breakpoints)

    def batch(self, ts) -> np.ndarray:
        ts = _as_ts(ts)
        out = np.asarray(self.fn(ts), dtype=float)
        if out.shape != (ts.size, self.dim, self.dim):
            out = out.reshape(ts.size, self.dim, self.dim)
        return out


def as_matrix_function(obj, var: str = "t") -> MatrixFunction:
    if isinstance(obj, MatrixFunction):
        return obj
    if callable(obj):
        probe = np.asarray(obj(np.array([0.0])))
        return CallableMatrixFunction(obj, probe.shape[-1])
    arr = np.asarray(obj, dtype=object)
    if arr.dtype == object and any(isinstance(x, (str, Expression)) for x in arr.ravel()):
        return ExprMatrixFunction(obj, var=var)
    return ConstantMatrixFunction(np.asarray(obj, dtype=float))


# ---------------------------------------------------------------------------
# Chebyshev-Lobatto interpolation


def lobatto_nodes(a: float, b: float, n: int) -> np.ndarray:
    """``n + 1`` Chebyshev-Lobatto points on ``[a, b]`` in increasing order."""
    k = np.arange(n + 1)
    x = -np.cos(np.pi * k / n)
    return 0.5 * (a + b) + 0.5 * (b - a) * x


def barycentric_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    # nodes are ordered by -cos, which flips the alternating sign pattern
    return w * (-1.0) ** n


def barycentric_eval(nodes, weights, values, ts) -> np.ndarray:
    """Evaluate the Lobatto interpolant of ``values[k, ...]`` at ``ts``."""
    ts = _as_ts(ts)
    diff = ts[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    c = weights[None, :] / diff
    denom = c.sum(axis=1)
    out = np.tensordot(c, values, axes=(1, 0)) / denom.reshape((-1,) + (1,) * (values.ndim - 1))
    rows, cols = np.nonzero(exact)
    if rows.size:
        out[rows] = values[cols]
    return out


@dataclass
class ChebyshevMatrixFunction(MatrixFunction):
    """Polynomial interpolant of a matrix function on ``[a, b]``."""

    a: float
    b: float
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dim = self.values.shape[-1]
        self.breakpoints = ()

    @property
    def degree(self) -> int:
        return len(self.nodes) - 1

    def batch(self, ts) -> np.ndarray:
        return barycentric_eval(self.nodes, self.weights, self.values, ts)

    @classmethod
    def from_values(cls, a: float, b: float, values: np.ndarray) -> "ChebyshevMatrixFunction":
        n = values.shape[0] - 1
        return cls(a, b, lobatto_nodes(a, b, n), barycentric_weights(n), np.asarray(values))

    @classmethod
    def fit(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        a: float,
        b: float,
        tol: float = 1e-12,
        start: int = 16,
        max_degree: int = 512,
    ) -> "ChebyshevMatrixFunction":
        """Fit by degree doubling until the nested-node check meets ``tol``.

        ``fn`` maps an array of times to a stack of matrices.  The check
        compares the degree-n interpolant against fresh samples at the
        n new nodes of the degree-2n grid, relative to ``max(1, |f|)``.
        """
        n = start
        vals = np.asarray(fn(lobatto_nodes(a, b, n)), dtype=float)
        while True:
            nn = 2 * n
            fine = lobatto_nodes(a, b, nn)
            new_t = fine[1::2]
            new_v = np.asarray(fn(new_t), dtype=float)
            coarse = cls.from_values(a, b, vals)
            err = np.max(np.abs(coarse.batch(new_t) - new_v))
            scale = max(1.0, float(np.max(np.abs(new_v))), float(np.max(np.abs(vals))))
            merged = np.empty((nn + 1,) + vals.shape[1:])
            merged[0::2] = vals
            merged[1::2] = new_v
            if err <= tol * scale:
                return cls.from_values(a, b, merged)
            if nn >= max_degree:
                raise ArithmeticError(
                    f"Chebyshev fit did not reach tolerance {tol:g} by degree {nn} (err {err:.2e})"
                )
            vals, n = merged, nn
