"""Random smooth matrix generators for identity trials.

Each generator is a low-degree trigonometric polynomial in ``t`` with
coefficients drawn uniformly from ``[-1, 1]``, rescaled so that its largest
spectral norm over a sample of the working interval equals a fixed bound.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from ..texp.matfun import MatrixFunction

__all__ = ["TrigMatrixFunction", "random_generator", "random_invertible", "random_constant",
           "trial_rng", "NORM_BOUND"]

NORM_BOUND = 2.0


class TrigMatrixFunction(MatrixFunction):
    """``G(t) = sum_k P_k cos(k t) + Q_k sin(k t)`` plus an optional offset.

    ``offset`` is a constant matrix added after scaling; it is used to make
    families that stay invertible.
    """

    def __init__(self, cos_coef: np.ndarray, sin_coef: np.ndarray,
                 offset: np.ndarray | None = None):
        self.cos_coef = np.asarray(cos_coef, dtype=float)
        self.sin_coef = np.asarray(sin_coef, dtype=float)
        self.dim = self.cos_coef.shape[-1]
        self.offset = np.zeros((self.dim, self.dim)) if offset is None else np.asarray(offset, float)
        self.freqs = np.arange(self.cos_coef.shape[0], dtype=float)
        self.breakpoints = ()

    def batch(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        arg = ts[:, None] * self.freqs[None, :]
        out = (np.tensordot(np.cos(arg), self.cos_coef, axes=(1, 0))
               + np.tensordot(np.sin(arg), self.sin_coef, axes=(1, 0)))
        return out + self.offset

    def derivative(self) -> "TrigMatrixFunction":
        k = self.freqs[:, None, None]
        return TrigMatrixFunction(k * self.sin_coef, -k * self.cos_coef)

    def scaled(self, c: float) -> "TrigMatrixFunction":
        return TrigMatrixFunction(c * self.cos_coef, c * self.sin_coef, c * self.offset)


def trial_rng(seed: int, key: str, *extra: int) -> np.random.Generator:
    """Deterministic stream for one (seed, identity, trial) combination."""
    entropy = [int(seed), zlib.crc32(key.encode("utf-8"))] + [int(x) for x in extra]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _max_norm(fn: MatrixFunction, interval: Sequence[float], samples: int = 33) -> float:
    ts = np.linspace(interval[0], interval[1], samples)
    return float(np.max(np.linalg.norm(fn.batch(ts), ord=2, axis=(1, 2))))


def random_generator(rng: np.random.Generator, dim: int, interval: Sequence[float],
                     degree: int = 2, bound: float = NORM_BOUND) -> TrigMatrixFunction:
    """Trigonometric polynomial generator with spectral norm at most ``bound``
    at sampled times of ``interval``."""
    P = rng.uniform(-1.0, 1.0, size=(degree + 1, dim, dim))
    Q = rng.uniform(-1.0, 1.0, size=(degree + 1, dim, dim))
    Q[0] = 0.0
    g = TrigMatrixFunction(P, Q)
    return g.scaled(bound / _max_norm(g, interval))


def random_invertible(rng: np.random.Generator, dim: int, interval: Sequence[float],
                      degree: int = 2) -> TrigMatrixFunction:
    """``3 I + G(t)`` with ``|G| <= 2``: smallest singular value at least 1."""
    g = random_generator(rng, dim, interval, degree)
    return TrigMatrixFunction(g.cos_coef, g.sin_coef, 3.0 * np.eye(dim))


def random_constant(rng: np.random.Generator, dim: int, invertible: bool = True,
                    bound: float = NORM_BOUND) -> np.ndarray:
    """Constant matrix; invertible ones are ``I + M/2`` with ``|M| <= 1``,
    the others have rank ``dim - 1``."""
    M = rng.uniform(-1.0, 1.0, size=(dim, dim))
    if invertible:
        return np.eye(dim) + 0.5 * M / np.linalg.norm(M, 2)
    U, s, Vt = np.linalg.svd(M)
    s[-1] = 0.0
    M = (U * s) @ Vt
    norm = np.linalg.norm(M, 2)
    return M if norm == 0 else bound * M / norm
