"""Uniformly sampled functions with finite-difference derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..expr import as_expression

__all__ = ["Grid", "BOUNDARY_BAND"]

# width of the band lost at each end by the 5-point stencil
BOUNDARY_BAND = 2


@dataclass(frozen=True, eq=False)
class Grid:
    """Samples of a function on a tensor grid.

    Parameters
    ----------
    variables : one name per axis
    ranges : ``(lo, hi)`` per axis; samples include both ends
    values : array with one axis per variable
    valid : boolean mask; points inside the finite-difference boundary
        band of any derivative taken so far are ``False``
    """

    variables: tuple
    ranges: tuple
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "ranges", tuple((float(lo), float(hi)) for lo, hi in self.ranges))
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if len(self.variables) != vals.ndim or len(self.ranges) != vals.ndim:
            raise ValueError("one variable and one range per sample axis required")
        for (lo, hi), n in zip(self.ranges, vals.shape):
            if not hi > lo:
                raise ValueError("axis range must have hi > lo")
            if n < 2:
                raise ValueError("each axis needs at least two samples")
        if self.valid is None:
            object.__setattr__(self, "valid", np.ones(vals.shape, dtype=bool))
        elif np.shape(self.valid) != vals.shape:
            raise ValueError("mask shape must match samples")

    # -- construction ---------------------------------------------------
    @classmethod
    def from_function(cls, fn, variables: Sequence[str], ranges, shape,
                      bindings: Mapping[str, float] | None = None) -> "Grid":
        """Sample an expression (or ``fn(**coords)``) on a fresh grid."""
        variables = tuple(variables)
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(ranges, shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = dict(zip(variables, mesh))
        vals = _evaluate(fn, coords, bindings, mesh[0].shape)
        return cls(variables, tuple(ranges), vals)

    def like(self, values, valid=None) -> "Grid":
        return Grid(self.variables, self.ranges, values,
                    self.valid.copy() if valid is None else valid)

    # -- geometry -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.ranges, self.shape))

    def axis(self, var: str) -> np.ndarray:
        i = self.variables.index(var)
        lo, hi = self.ranges[i]
        return np.linspace(lo, hi, self.shape[i])

    def mesh(self) -> dict:
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.shape)]
        return dict(zip(self.variables, np.meshgrid(*axes, indexing="ij")))

    def _compatible(self, other: "Grid"):
        if (other.variables != self.variables or other.ranges != self.ranges
                or other.shape != self.shape):
            raise ValueError("grids do not share variables, ranges and shape")

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other) -> "Grid":
        if isinstance(other, Grid):
            self._compatible(other)
            return self.like(self.values + other.values, self.valid & other.valid)
        return self.like(self.values + other)

    __radd__ = __add__

    def __sub__(self, other) -> "Grid":
        if isinstance(other, Grid):
            self._compatible(other)
            return self.like(self.values - other.values, self.valid & other.valid)
        return self.like(self.values - other)

    def __neg__(self) -> "Grid":
        return self.like(-self.values)

    def __mul__(self, other) -> "Grid":
        if isinstance(other, Grid):
            self._compatible(other)
            return self.like(self.values * other.values, self.valid & other.valid)
        return self.like(self.values * other)

    __rmul__ = __mul__

    def multiply_by(self, fn, bindings: Mapping[str, float] | None = None) -> "Grid":
        vals = _evaluate(fn, self.mesh(), bindings, self.shape)
        return self.like(self.values * vals)

    # -- calculus -------------------------------------------------------
    def derivative(self, var: str) -> "Grid":
        """Fourth-order central difference along ``var``.

        Values in the two-point band at each end of the axis are set to
        nan and flagged invalid.
        """
        if var not in self.variables:
            return self.like(np.zeros(self.shape))
        ax = self.variables.index(var)
        n = self.shape[ax]
        if n < 2 * BOUNDARY_BAND + 1:
            raise ValueError("axis too short for the 5-point stencil")
        h = self.spacing[ax]
        f = np.moveaxis(self.values, ax, 0)
        d = np.full_like(f, np.nan)
        d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
        mask = np.moveaxis(self.valid, ax, 0).copy()
        # a point is valid only if its whole stencil was
        inner = mask[:-4] & mask[1:-3] & mask[2:-2] & mask[3:-1] & mask[4:]
        mask[:] = False
        mask[2:-2] = inner
        return Grid(self.variables, self.ranges, np.moveaxis(d, 0, ax), np.moveaxis(mask, 0, ax))

    def max_abs(self) -> float:
        """Max magnitude over valid points only."""
        if not np.any(self.valid):
            raise ValueError("no valid points left on the grid")
        return float(np.max(np.abs(self.values[self.valid])))


def _evaluate(fn, coords: dict, bindings, shape) -> np.ndarray:
    if callable(fn) and not isinstance(fn, str) and not hasattr(fn, "root"):
        out = np.asarray(fn(**coords), dtype=float)
        return np.broadcast_to(out, shape).astype(float)
    e = as_expression(fn)
    env = dict(bindings or {})
    env.update(coords)
    missing = set(e.variables) - set(env)
    if missing:
        raise ValueError(f"unbound variable(s) {sorted(missing)} when sampling {e}")
    names = tuple(e.variables)
    with np.errstate(all="ignore"):
        out = e.compile(names)(*[env[v] for v in names]) if names else e.compile(())()
    out = np.broadcast_to(np.asarray(out, dtype=float), shape).astype(float)
    return out
