"""Randomized verification of catalog identities."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..texp.product import collect_stats
from .catalog import DEFAULT_K, IdentityEntry, TrialContext, catalog_ids, parse_identity_id
from .generators import random_constant, random_generator, random_invertible, trial_rng

__all__ = [
    "TrialConfig",
    "VerificationReport",
    "verify_identity",
    "run_suite",
    "relative_error",
    "reports_to_json",
    "REPORT_SCHEMA_VERSION",
]

REPORT_SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class TrialConfig:
    """Settings shared by every trial of one verification run."""

    dimension: int = 2
    interval: tuple = (0.0, 1.0)
    seed: int = 0
    tolerance: float = 1e-6
    trials: int = 25
    engine_tol: float = 1e-10
    quad_points: int = 16

    def __post_init__(self):
        object.__setattr__(self, "interval", tuple(float(x) for x in self.interval))
        if not 1 <= self.dimension <= 6:
            raise ValueError("dimension must be between 1 and 6")
        if not self.interval[1] > self.interval[0]:
            raise ValueError("interval must satisfy a < t")
        if self.trials < 1:
            raise ValueError("at least one trial is required")
        if not (self.tolerance > 0 and self.engine_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class VerificationReport:
    """Outcome of one identity over a batch of trials.

    ``passed`` holds exactly when every trial ran and the largest relative
    error is within ``tolerance``.
    """

    identity: str
    trials: int
    seed: int
    dimension: int
    interval: list
    tolerance: float
    engine_tolerance: float
    errors: list
    max_error: float
    passed: bool
    failure: Optional[str] = None
    oracle: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def relative_error(lhs: np.ndarray, rhs: np.ndarray) -> float:
    """Frobenius distance scaled by ``max(1, |lhs|, |rhs|)``."""
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    scale = max(1.0, float(np.linalg.norm(lhs)), float(np.linalg.norm(rhs)))
    return float(np.linalg.norm(lhs - rhs)) / scale


def _draw(entry: IdentityEntry, rng, dim: int, interval) -> dict:
    gens = {}
    for name, kind in entry.inputs.items():
        if kind == "smooth":
            gens[name] = random_generator(rng, dim, interval)
        elif kind == "invertible":
            gens[name] = random_invertible(rng, dim, interval)
        elif kind == "const":
            gens[name] = random_constant(rng, dim, invertible=True)
        elif kind == "const_any":
            gens[name] = random_constant(rng, dim, invertible=False)
        else:  # pragma: no cover - catalog is static
            raise ValueError(f"unknown input kind {kind!r}")
    return gens


def _run_trial(entry, k, cfg: TrialConfig, index: int, generators):
    rng = trial_rng(cfg.seed, entry.id if k is None else f"{entry.id}({k})", index,
                    cfg.dimension)
    a, t = cfg.interval
    gens = dict(generators) if generators is not None else _draw(entry, rng, cfg.dimension,
                                                                    cfg.interval)
    ctx = TrialContext(gens, a, t, cfg.engine_tol, rng, cfg.quad_points)
    with collect_stats() as stats:
        pairs = entry.evaluate(ctx, k) if k is not None else entry.evaluate(ctx)
    err = max(relative_error(l, r) for l, r in pairs)
    return err, stats.as_dict()


def verify_identity(identity: str, config: TrialConfig | None = None, *,
                    generators: Mapping[str, object] | None = None,
                    workers: int = 1, **overrides) -> VerificationReport:
    """Check one catalog identity over randomized trials.

    Parameters
    ----------
    identity : catalog id, with ``(k)`` for parametric entries
    config : trial settings; keyword ``overrides`` replace its fields
    generators : fixed inputs (name -> MatrixFunction or constant matrix)
        used for every trial instead of random draws
    workers : trials run on this many threads; results are merged by trial
        index so the report does not depend on completion order
    """
    entry, k = parse_identity_id(identity)
    cfg = config or TrialConfig()
    if overrides:
        cfg = TrialConfig(**{**asdict(cfg), **overrides})
    label = entry.id if k is None else f"{entry.id}({k})"
    errors: list = [None] * cfg.trials
    stats: list = [None] * cfg.trials
    failure = None

    def job(i):
        return _run_trial(entry, k, cfg, i, generators)

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, range(cfg.trials)))
        else:
            results = [job(i) for i in range(cfg.trials)]
        for i, (err, st) in enumerate(results):
            errors[i], stats[i] = err, st
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        failure = f"{type(exc).__name__}: {exc}"

    done = [e for e in errors if e is not None]
    max_err = max(done) if done else float("inf")
    ok = failure is None and len(done) == cfg.trials and max_err <= cfg.tolerance
    oracle = {}
    if any(s is not None for s in stats):
        got = [s for s in stats if s is not None]
        oracle = {
            "exponentials": int(sum(s["exponentials"] for s in got)),
            "generator_samples": int(sum(s["generator_samples"] for s in got)),
            "segments": int(sum(s["segments"] for s in got)),
            "max_level": int(max(s["max_level"] for s in got)),
            "max_step_discrepancy": float(max(s["discrepancy"] for s in got)),
        }
    return VerificationReport(
        identity=label, trials=cfg.trials, seed=cfg.seed, dimension=cfg.dimension,
        interval=list(cfg.interval), tolerance=cfg.tolerance, engine_tolerance=cfg.engine_tol,
        errors=[float(e) if e is not None else None for e in errors],
        max_error=float(max_err), passed=bool(ok), failure=failure, oracle=oracle,
    )


def run_suite(seed: int = 42, trials: int = 25, tolerance: float = 1e-6, *,
              dimension: int = 2, interval: Sequence[float] = (0.0, 1.0),
              engine_tol: float = 1e-10, ids: Sequence[str] | None = None,
              ks: Sequence[int] = DEFAULT_K, workers: int = 1) -> list[VerificationReport]:
    """Verify every catalog entry (parametric ones for each ``k`` in ``ks``)."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = TrialConfig(dimension=dimension, interval=tuple(interval), seed=seed,
                      tolerance=tolerance, trials=trials, engine_tol=engine_tol)
    chosen = list(ids) if ids is not None else catalog_ids(ks)
    return [verify_identity(i, cfg, workers=workers) for i in chosen]


def reports_to_json(reports: Sequence[VerificationReport], **extra) -> str:
    """Deterministic JSON document for a list of reports."""
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "passed": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=2)
