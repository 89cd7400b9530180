"""Ordered exponentials by product integration.

Conventions
-----------
``direction="T"``  later factors on the left:  dE/dt = L(t) E.
``direction="T0"`` later factors on the right: dE/dt = E L(t).

A single step of length ``h`` contributes ``exp(h * sign * L(midpoint))``.
The midpoint product is time symmetric, so its error expands in even powers
of the step and Romberg extrapolation with factors ``4**j - 1`` applies.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from functools import reduce
from typing import Literal, Optional

import numpy as np

from .expm import expm_batch
from .matfun import (
    ChebyshevMatrixFunction,
    MatrixFunction,
    as_matrix_function,
    barycentric_eval,
    barycentric_weights,
    lobatto_nodes,
)

__all__ = [
    "OrderedExpTask",
    "StepControl",
    "ordered_exp",
    "product_integral",
    "segment_propagators",
    "DenseOrderedExp",
    "RefinementBudgetError",
    "collect_stats",
    "EngineStats",
]

Direction = Literal["T", "T0"]


_TOL_FLOOR = 1e-14


class RefinementBudgetError(ArithmeticError):
    """Step doubling exhausted its budget before meeting the tolerance."""


# ---------------------------------------------------------------------------
# statistics


@dataclass
class EngineStats:
    generator_samples: int = 0
    exponentials: int = 0
    segments: int = 0
    max_level: int = 0
    discrepancy: float = 0.0

    def as_dict(self) -> dict:
        return {
            "generator_samples": self.generator_samples,
            "exponentials": self.exponentials,
            "segments": self.segments,
            "max_level": self.max_level,
            "discrepancy": self.discrepancy,
        }


_STATS: contextvars.ContextVar[Optional[EngineStats]] = contextvars.ContextVar(
    "chronexp_engine_stats", default=None
)


@contextlib.contextmanager
def collect_stats():
    """Collect engine counters for the enclosed block."""
    stats = EngineStats()
    token = _STATS.set(stats)
    try:
        yield stats
    finally:
        _STATS.reset(token)


def _record(samples=0, exps=0, segments=0, level=0, disc=0.0):
    s = _STATS.get()
    if s is not None:
        s.generator_samples += samples
        s.exponentials += exps
        s.segments += segments
        s.max_level = max(s.max_level, level)
        s.discrepancy = max(s.discrepancy, disc)


# ---------------------------------------------------------------------------
# task description


@dataclass(frozen=True)
class StepControl:
    """Step-doubling policy.

    ``initial_steps`` is the number of sub-steps per segment on the first
    level; each level doubles it.  With ``richardson`` the levels are
    combined by Romberg extrapolation.
    """

    initial_steps: int = 1
    richardson: bool = True
    max_levels: int = 12
    min_levels: int = 2
    # target size of |L| * segment length when choosing segments
    segment_scale: float = 0.5


@dataclass(frozen=True)
class OrderedExpTask:
    generator: MatrixFunction
    a: float
    t: float
    direction: Direction = "T"
    sign: float = 1.0
    method: Literal["product", "dyson"] = "product"
    tol: float = 1e-10
    steps: Optional[int] = None  # fixed step count disables refinement
    order: int = 6
    quad_points: int = 16
    control: StepControl = field(default_factory=StepControl)


def _check_direction(direction: str) -> str:
    if direction not in ("T", "T0"):
        raise ValueError(f"direction must be 'T' or 'T0', got {direction!r}")
    return direction


def _ordered_reduce(F: np.ndarray, direction: str) -> np.ndarray:
    """Ordered product along axis -3 of ``F[..., k, n, n]`` (k a power of two
    or any length); index 0 is the earliest factor."""
    while F.shape[-3] > 1:
        k = F.shape[-3]
        if k % 2:
            last = F[..., -1:, :, :]
            F = F[..., :-1, :, :]
        else:
            last = None
        early, late = F[..., 0::2, :, :], F[..., 1::2, :, :]
        F = late @ early if direction == "T" else early @ late
        if last is not None:
            F = np.concatenate([F[..., :-1, :, :],
                                (last @ F[..., -1:, :, :]) if direction == "T"
                                else (F[..., -1:, :, :] @ last)], axis=-3)
    return F[..., 0, :, :]


def _midpoint_products(gen: MatrixFunction, edges: np.ndarray, nsub: int,
                       direction: str, sign: float) -> np.ndarray:
    lo, hi = edges[:-1], edges[1:]
    h = (hi - lo) / nsub
    mids = lo[:, None] + (np.arange(nsub)[None, :] + 0.5) * h[:, None]
    vals = gen.batch(mids.ravel())
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite generator sample")
    n = vals.shape[-1]
    vals = vals.reshape(len(lo), nsub, n, n) * (sign * h)[:, None, None, None]
    F = expm_batch(vals)
    _record(samples=mids.size, exps=mids.size)
    return _ordered_reduce(F, direction)


def segment_propagators(
    gen: MatrixFunction,
    edges,
    direction: Direction = "T",
    sign: float = 1.0,
    tol: float = 1e-10,
    control: StepControl = StepControl(),
) -> tuple[np.ndarray, np.ndarray]:
    """Propagator of every segment ``[edges[k], edges[k+1]]``.

    All segments are refined together.  Returns ``(props, discrepancy)``
    where ``discrepancy[k]`` is the last step-doubling change of segment k
    relative to ``max(1, |prop|)``.
    """
    edges = np.asarray(edges, dtype=float)
    # step doubling cannot resolve changes below a few ulps
    tol = max(float(tol), _TOL_FLOOR)
    prev_row = None
    for level in range(control.max_levels + 1):
        nsub = control.initial_steps * 2 ** level
        P = _midpoint_products(gen, edges, nsub, direction, sign)
        if control.richardson and prev_row is not None:
            row = [P]
            for j in range(1, level + 1):
                row.append(row[j - 1] + (row[j - 1] - prev_row[j - 1]) / (4.0 ** j - 1.0))
        else:
            row = [P] * (level + 1)
        best = row[-1]
        if prev_row is not None and level >= control.min_levels - 1:
            diff = np.linalg.norm(best - prev_row[-1], axis=(-2, -1))
            scale = np.maximum(1.0, np.linalg.norm(best, axis=(-2, -1)))
            rel = diff / scale
            if np.all(rel <= tol):
                _record(segments=len(edges) - 1, level=level, disc=float(rel.max()))
                return best, rel
        prev_row = row
    raise RefinementBudgetError(
        f"product integral did not reach tolerance {tol:g} in {control.max_levels} levels"
    )


def _norm_estimate(gen: MatrixFunction, a: float, b: float, samples: int = 9) -> float:
    ts = np.linspace(a, b, samples)
    vals = gen.batch(ts)
    return float(np.max(np.sum(np.abs(vals), axis=-2)))


def _pieces(gen: MatrixFunction, a: float, b: float) -> list[tuple[float, float]]:
    """Smooth pieces of ``[a, b]`` split at the generator's breakpoints."""
    cuts = [float(x) for x in getattr(gen, "breakpoints", ()) if a < x < b]
    pts = [a] + sorted(cuts) + [b]
    return list(zip(pts[:-1], pts[1:]))


def _segment_edges(gen, a, b, scale):
    edges = []
    for lo, hi in _pieces(gen, a, b):
        nrm = _norm_estimate(gen, lo, hi)
        m = max(1, int(np.ceil((hi - lo) * nrm / scale)))
        pts = np.linspace(lo, hi, m + 1)
        edges.extend(pts[:-1])
    edges.append(b)
    return np.asarray(edges)


def product_integral(gen, a: float, b: float, steps: int,
                     direction: Direction = "T", sign: float = 1.0) -> np.ndarray:
    """Plain midpoint product with ``steps`` uniform steps per smooth piece.

    No refinement and no extrapolation; second order in the step.
    """
    gen = as_matrix_function(gen)
    _check_direction(direction)
    if a == b:
        return np.eye(gen.dim)
    if b < a:
        return product_integral(gen, b, a, steps, "T0" if direction == "T" else "T", -sign)
    parts = [
        _midpoint_products(gen, np.array([lo, hi]), steps, direction, sign)[0]
        for lo, hi in _pieces(gen, a, b)
    ]
    return _combine(parts, direction)


def _combine(parts, direction):
    if direction == "T":
        return reduce(lambda acc, p: p @ acc, parts)
    return reduce(lambda acc, p: acc @ p, parts)


def ordered_exp(
    task_or_gen,
    a: Optional[float] = None,
    t: Optional[float] = None,
    direction: Direction = "T",
    sign: float = 1.0,
    method: str = "product",
    tol: float = 1e-10,
    steps: Optional[int] = None,
    order: int = 6,
    quad_points: int = 16,
    control: Optional[StepControl] = None,
) -> np.ndarray:
    """Ordered exponential ``T exp{sign * int_a^t L}`` (or the T0 variant).

    Accepts an :class:`OrderedExpTask` or the same fields as arguments.
    For ``t < a`` the interval is reversed: the direction flips and the
    sign is negated, which is the backward solution of the same equation.
    """
    if isinstance(task_or_gen, OrderedExpTask):
        task = task_or_gen
    else:
        if a is None or t is None:
            raise TypeError("ordered_exp needs a task or (generator, a, t)")
        task = OrderedExpTask(
            generator=as_matrix_function(task_or_gen), a=float(a), t=float(t),
            direction=direction, sign=float(sign), method=method, tol=float(tol),
            steps=steps, order=order, quad_points=quad_points,
            control=control or StepControl(),
        )
    gen = task.generator
    _check_direction(task.direction)
    if not task.tol > 0:
        raise ValueError("tolerance must be positive")
    if task.t == task.a:
        return np.eye(gen.dim)
    if task.t < task.a:
        flipped = "T0" if task.direction == "T" else "T"
        return ordered_exp(
            OrderedExpTask(gen, task.t, task.a, flipped, -task.sign, task.method, task.tol,
                           task.steps, task.order, task.quad_points, task.control)
        )
    if task.method == "dyson":
        from .dyson import dyson_partial_sum

        return dyson_partial_sum(gen, task.a, task.t, task.order, task.quad_points,
                                 direction=task.direction, sign=task.sign)
    if task.method != "product":
        raise ValueError(f"unknown method {task.method!r}")
    if task.steps is not None:
        return product_integral(gen, task.a, task.t, task.steps, task.direction, task.sign)
    ctrl = task.control
    edges = _segment_edges(gen, task.a, task.t, ctrl.segment_scale)
    nseg = len(edges) - 1
    props, _ = segment_propagators(gen, edges, task.direction, task.sign,
                                   task.tol / nseg, ctrl)
    return _combine(list(props), task.direction)


# ---------------------------------------------------------------------------
# dense output


class DenseOrderedExp:
    """Propagator on a whole interval with interpolation in the end time.

    ``from_start(s)`` is the ordered exponential over ``[a, s]`` and
    ``to_end(s)`` the one over ``[s, b]``, for any ``s`` in ``[a, b]``.
    Values are computed at Chebyshev-Lobatto nodes of each smooth piece by
    accumulating short-segment propagators and are interpolated
    barycentrically; the node count doubles until the interpolant agrees
    with fresh nodes to ``tol``.
    """

    def __init__(self, gen, a: float, b: float, direction: Direction = "T",
                 sign: float = 1.0, tol: float = 1e-12, start: int = 16,
                 max_nodes: int = 1024, control: StepControl = StepControl()):
        gen = as_matrix_function(gen)
        _check_direction(direction)
        if not b > a:
            raise ValueError("dense propagator needs b > a")
        self.gen, self.a, self.b = gen, float(a), float(b)
        self.direction, self.sign, self.tol = direction, float(sign), float(tol)
        self._pieces = []
        carry = np.eye(gen.dim)
        for lo, hi in _pieces(gen, self.a, self.b):
            nodes, vals = self._build_piece(lo, hi, carry, start, max_nodes, control)
            self._pieces.append((lo, hi, nodes, barycentric_weights(len(nodes) - 1), vals))
            carry = vals[-1]
        self.end = carry
        self._end_inv = None

    def _cumulative(self, lo, hi, n, carry, control):
        nodes = lobatto_nodes(lo, hi, n)
        props, _ = segment_propagators(self.gen, nodes, self.direction, self.sign,
                                       self.tol / n, control)
        vals = np.empty((n + 1,) + carry.shape)
        vals[0] = carry
        for k in range(n):
            vals[k + 1] = props[k] @ vals[k] if self.direction == "T" else vals[k] @ props[k]
        return nodes, vals

    def _build_piece(self, lo, hi, carry, n, max_nodes, control):
        nodes, vals = self._cumulative(lo, hi, n, carry, control)
        while True:
            fine_nodes, fine_vals = self._cumulative(lo, hi, 2 * n, carry, control)
            approx = barycentric_eval(nodes, barycentric_weights(n), vals, fine_nodes[1::2])
            err = np.max(np.abs(approx - fine_vals[1::2]))
            scale = max(1.0, float(np.max(np.abs(fine_vals))))
            if err <= self.tol * scale:
                return fine_nodes, fine_vals
            if 2 * n >= max_nodes:
                raise RefinementBudgetError(
                    f"dense propagator interpolation stalled at {2 * n} nodes (err {err:.2e})"
                )
            nodes, vals, n = fine_nodes, fine_vals, 2 * n

    @property
    def dim(self) -> int:
        return self.gen.dim

    @property
    def nodes(self) -> int:
        return sum(len(p[2]) for p in self._pieces)

    def from_start(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < self.a - 1e-12 * (self.b - self.a)) or np.any(
                ts > self.b + 1e-12 * (self.b - self.a)):
            raise ValueError("evaluation time outside the dense interval")
        out = np.empty((ts.size, self.dim, self.dim))
        for k, (lo, hi, nodes, w, vals) in enumerate(self._pieces):
            last = k == len(self._pieces) - 1
            mask = (ts >= lo) & ((ts <= hi) if last else (ts < hi))
            if k == 0:
                mask |= ts < lo
            if last:
                mask |= ts > hi
            if np.any(mask):
                out[mask] = barycentric_eval(nodes, w, vals, np.clip(ts[mask], lo, hi))
        return out

    def inverse_from_start(self, ts) -> np.ndarray:
        return np.linalg.inv(self.from_start(ts))

    def to_end(self, ts) -> np.ndarray:
        X = self.from_start(ts)
        if self.direction == "T":
            # X(b, a) = X(b, s) X(s, a)
            return np.linalg.solve(np.swapaxes(X, -1, -2),
                                   np.swapaxes(np.broadcast_to(self.end, X.shape), -1, -2)
                                   ).swapaxes(-1, -2)
        # Y(b) = Y(s) Y(s -> b)
        return np.linalg.solve(X, np.broadcast_to(self.end, X.shape))

    def inverse_to_end(self, ts) -> np.ndarray:
        return np.linalg.inv(self.to_end(ts))

    def as_matrix_function(self) -> MatrixFunction:
        from .matfun import CallableMatrixFunction

        return CallableMatrixFunction(self.from_start, self.dim,
                                      breakpoints=tuple(p[0] for p in self._pieces[1:]))
