"""Aggregation of per-model performance deltas into one fleet-level score.

A configuration is scored by the weighted mean of per-model deltas, but only
when the share of models that regress (delta strictly below ``-alpha``) is at
most ``epsilon``. Configurations over that limit are *infeasible*; they carry
no aggregate value at all rather than a ``-inf`` float.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Configuration, Thresholds
from .errors import EmptyFleet, LengthMismatch, NonFinite, UnnormalizedWeights

WEIGHT_SUM_TOL = 1e-9


def performance_delta(p_treatment: float, p_baseline: float) -> float:
    """Treatment minus baseline; positive means improvement."""
    if not (math.isfinite(p_treatment) and math.isfinite(p_baseline)):
        raise NonFinite(f"non-finite performance: treatment={p_treatment}, baseline={p_baseline}")
    return p_treatment - p_baseline


def regression_rate(deltas: Sequence[float], alpha: float) -> float:
    """Fraction of models whose delta is strictly below ``-alpha``."""
    if len(deltas) == 0:
        raise EmptyFleet("regression rate of an empty delta set")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    regressed = sum(1 for d in deltas if d < -alpha)
    return regressed / len(deltas)


def allowed_regressions(n: int, epsilon: float) -> int:
    """Largest regressed-model count ``c`` with ``c / n <= epsilon``."""
    c = 0
    while c < n and (c + 1) / n <= epsilon:
        c += 1
    return c


def feasibility_margin(deltas: Sequence[float], thresholds: Thresholds) -> float | None:
    """Signed distance of a delta vector from the regression-rate constraint.

    With ``c`` regressions allowed, the constraint holds iff the ``(c+1)``-th
    smallest delta is at least ``-alpha``; the margin is that delta plus alpha,
    so it is >= 0 exactly on feasible trials and varies continuously with the
    deltas. ``None`` when every model may regress (no constraint).
    """
    if len(deltas) == 0:
        raise EmptyFleet("feasibility margin of an empty delta set")
    c = allowed_regressions(len(deltas), thresholds.epsilon)
    if c >= len(deltas):
        return None
    return sorted(deltas)[c] + thresholds.alpha


def weighted_mean(deltas: Sequence[float], weights: Sequence[float]) -> float:
    """Sum of ``w_i * delta_i``; exact-sum accumulation makes it order independent."""
    if len(deltas) != len(weights):
        raise LengthMismatch(f"{len(deltas)} deltas vs {len(weights)} weights")
    if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise UnnormalizedWeights(f"weights sum to {math.fsum(weights)!r}, expected 1")
    return math.fsum(w * d for w, d in zip(weights, deltas))


@dataclass(frozen=True)
class AggregateResult:
    weighted_mean: float
    regression_rate: float
    feasible: bool
    alpha: float
    epsilon: float

    @property
    def aggregate(self) -> float | None:
        """The aggregate delta, or ``None`` for an infeasible result."""
        return self.weighted_mean if self.feasible else None

    def score(self) -> float:
        """Sortable score with infeasible mapped to ``-inf`` (ranking only)."""
        return self.weighted_mean if self.feasible else -math.inf

    def to_json(self) -> dict:
        out = {
            "weighted_mean": self.weighted_mean,
            "regression_rate": self.regression_rate,
            "feasible": self.feasible,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
        }
        if self.feasible:
            out["aggregate"] = self.weighted_mean
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "AggregateResult":
        res = cls(
            weighted_mean=obj["weighted_mean"],
            regression_rate=obj["regression_rate"],
            feasible=obj["feasible"],
            alpha=obj["alpha"],
            epsilon=obj["epsilon"],
        )
        if res.feasible != (res.regression_rate <= res.epsilon):
            raise ValueError("feasible flag disagrees with regression_rate/epsilon")
        return res


def aggregate_delta(
    deltas: Sequence[float], weights: Sequence[float], thresholds: Thresholds
) -> AggregateResult:
    rate = regression_rate(deltas, thresholds.alpha)
    mean = weighted_mean(deltas, weights)
    return AggregateResult(
        weighted_mean=mean,
        regression_rate=rate,
        feasible=rate <= thresholds.epsilon,
        alpha=thresholds.alpha,
        epsilon=thresholds.epsilon,
    )


def aggregate_batch(deltas: np.ndarray, weights: Sequence[float], thresholds: Thresholds):
    """Vectorized scoring of many configurations at once.

    ``deltas`` has shape ``(n_configs, n_models)``. Returns ``(mean, rate,
    feasible)`` arrays. Means use a BLAS dot product and may differ from
    :func:`weighted_mean` in the last bits.
    """
    deltas = np.asarray(deltas, dtype=float)
    w = np.asarray(weights, dtype=float)
    if deltas.ndim != 2 or deltas.shape[1] != w.size:
        raise LengthMismatch(f"deltas shape {deltas.shape} vs {w.size} weights")
    if deltas.shape[1] == 0:
        raise EmptyFleet("no models")
    rate = np.count_nonzero(deltas < -thresholds.alpha, axis=1) / deltas.shape[1]
    mean = deltas @ w
    return mean, rate, rate <= thresholds.epsilon


@dataclass(frozen=True)
class GeneralizedTechnique:
    technique_id: str
    optimal_config: Configuration
    optimal_performance: float


def select_generalized(
    best_per_technique: Mapping[str, tuple[Configuration, AggregateResult]], tau: float
) -> list[GeneralizedTechnique]:
    """Techniques whose best feasible aggregate reaches ``tau`` (inclusive), id-sorted."""
    out = []
    for tid in sorted(best_per_technique):
        config, result = best_per_technique[tid]
        if result is not None and result.feasible and result.weighted_mean >= tau:
            out.append(GeneralizedTechnique(tid, config, result.weighted_mean))
    return out
