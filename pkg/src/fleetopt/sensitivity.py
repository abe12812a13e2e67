"""First-order sensitivity of the fleet objective to each hyperparameter.

A linear model ``mu ~ beta_0 + sum_k beta_k x_k`` is fit by least squares
over the feasible trials of one technique, with ``x`` the unit-box encoding
of the configuration. Categorical dims use reference coding (their first
value is the baseline level), so the design keeps full column rank next to
the intercept. The same fit per model, with that model's delta as target,
gives the cross-model variance of each coefficient. Dims whose global effect
and cross-model disagreement are both small are standardized; the rest stay
exposed for per-model tuning.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bayesopt import encode_config
from .core import Categorical, HyperparameterSpace
from .errors import RankDeficient, TooFewFeasibleTrials

STANDARDIZE = "standardize"
EXPOSE = "expose"


def design_columns(space: HyperparameterSpace) -> list[tuple[str, str]]:
    """``(column name, dim name)`` for every non-intercept design column."""
    cols = []
    for d in space.dims:
        if isinstance(d.kind, Categorical):
            cols.extend((f"{d.name}={v}", d.name) for v in d.kind.values[1:])
        else:
            cols.append((d.name, d.name))
    return cols


def design_row(space: HyperparameterSpace, config) -> np.ndarray:
    """Unit-box coordinates with each categorical's first level dropped."""
    enc = encode_config(space, config)
    keep = []
    i = 0
    for d in space.dims:
        if isinstance(d.kind, Categorical):
            m = len(d.kind.values)
            keep.extend(range(i + 1, i + m))
            i += m
        else:
            keep.append(i)
            i += 1
    return enc[keep]


def _design(trials, space: HyperparameterSpace) -> np.ndarray:
    rows = [design_row(space, r.config) for r in trials]
    x = np.array(rows, dtype=float).reshape(len(rows), -1)
    return np.column_stack([np.ones(len(rows)), x])


def _check_rank(x: np.ndarray, space: HyperparameterSpace) -> None:
    cols = design_columns(space)
    rank = 0
    collinear = []
    for j in range(x.shape[1]):
        r = np.linalg.matrix_rank(x[:, : j + 1])
        if r > rank:
            rank = r
        elif j > 0:
            dim = cols[j - 1][1]
            if dim not in collinear:
                collinear.append(dim)
    if collinear:
        raise RankDeficient(f"design matrix is rank deficient in {collinear}", collinear)


def _feasible(trials) -> list:
    return [r for r in trials if r.aggregate is not None and r.aggregate.feasible]


def _prepare(trials, space):
    used = _feasible(trials)
    n_params = 1 + len(design_columns(space))
    # one spare degree of freedom beyond an exact fit
    if len(used) < n_params + 1:
        raise TooFewFeasibleTrials(f"{len(used)} feasible trials, need at least {n_params + 1}")
    x = _design(used, space)
    _check_rank(x, space)
    return used, x


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    return coef, float(np.linalg.norm(resid))


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    beta: np.ndarray
    residual_norm: float
    trial_count: int


def fit_linear_surrogate(trials: Sequence, space: HyperparameterSpace) -> LinearFit:
    """Least-squares fit of the weighted-mean delta on feasible trials only."""
    used, x = _prepare(trials, space)
    y = np.array([r.aggregate.weighted_mean for r in used])
    coef, resid = _ols(x, y)
    return LinearFit(float(coef[0]), coef[1:], resid, len(used))


@dataclass(frozen=True)
class PerModelFits:
    betas: dict[str, np.ndarray]
    variance: np.ndarray
    excluded: tuple[str, ...] = ()


def per_model_sensitivities(trials: Sequence, space: HyperparameterSpace) -> PerModelFits:
    """One fit per model on its own deltas; population variance of each coefficient.

    Models missing a delta in any feasible trial are excluded and listed.
    """
    used, x = _prepare(trials, space)
    model_ids = list(used[0].per_model)
    betas = {}
    excluded = []
    for mid in model_ids:
        deltas = [r.per_model.get(mid) for r in used]
        if any(o is None or o.delta is None for o in deltas):
            excluded.append(mid)
            continue
        coef, _ = _ols(x, np.array([o.delta for o in deltas]))
        betas[mid] = coef[1:]
    if betas:
        stacked = np.array(list(betas.values()))
        variance = stacked.var(axis=0)
    else:
        variance = np.zeros(x.shape[1] - 1)
    return PerModelFits(betas, variance, tuple(excluded))


@dataclass(frozen=True)
class ExposurePolicy:
    beta_threshold_fraction: float = 0.1
    variance_threshold_fraction: float = 0.1

    def __post_init__(self):
        for name in ("beta_threshold_fraction", "variance_threshold_fraction"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 < v <= 1):
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")

    def to_json(self) -> dict:
        return {
            "beta_threshold_fraction": self.beta_threshold_fraction,
            "variance_threshold_fraction": self.variance_threshold_fraction,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExposurePolicy":
        unknown = set(obj) - {"beta_threshold_fraction", "variance_threshold_fraction"}
        if unknown:
            raise ValueError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class SensitivityEntry:
    column: str
    dim: str
    global_beta: float
    per_model_betas: dict[str, float]
    cross_model_variance: float
    decision: str


@dataclass(frozen=True)
class SensitivityReport:
    technique_id: str
    entries: tuple[SensitivityEntry, ...]
    decisions: dict[str, str]
    intercept: float
    residual_norm: float
    trial_count: int
    policy: ExposurePolicy = field(default_factory=ExposurePolicy)
    excluded_models: tuple[str, ...] = ()

    def exposed_dims(self) -> list[str]:
        return [d for d, v in self.decisions.items() if v == EXPOSE]

    def to_json(self) -> dict:
        return {
            "technique_id": self.technique_id,
            "entries": [
                {
                    "column": e.column,
                    "dim": e.dim,
                    "global_beta": e.global_beta,
                    "per_model_betas": dict(sorted(e.per_model_betas.items())),
                    "cross_model_variance": e.cross_model_variance,
                    "decision": e.decision,
                }
                for e in self.entries
            ],
            "decisions": dict(self.decisions),
            "intercept": self.intercept,
            "residual_norm": self.residual_norm,
            "trial_count": self.trial_count,
            "policy": self.policy.to_json(),
            "excluded_models": list(self.excluded_models),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SensitivityReport":
        return cls(
            technique_id=obj["technique_id"],
            entries=tuple(
                SensitivityEntry(
                    e["column"],
                    e["dim"],
                    float(e["global_beta"]),
                    {k: float(v) for k, v in e["per_model_betas"].items()},
                    float(e["cross_model_variance"]),
                    e["decision"],
                )
                for e in obj["entries"]
            ),
            decisions=dict(obj["decisions"]),
            intercept=float(obj["intercept"]),
            residual_norm=float(obj["residual_norm"]),
            trial_count=int(obj["trial_count"]),
            policy=ExposurePolicy.from_json(obj["policy"]),
            excluded_models=tuple(obj.get("excluded_models", ())),
        )


def column_decisions(beta, variance, policy: ExposurePolicy) -> list[str]:
    """Standardize a column iff both its |beta| and its variance fall below
    their fraction of the maximum over columns. A zero maximum counts as
    small for every column."""
    beta = np.abs(np.asarray(beta, dtype=float))
    variance = np.asarray(variance, dtype=float)
    b_max = beta.max(initial=0.0)
    v_max = variance.max(initial=0.0)
    out = []
    for b, v in zip(beta, variance):
        small_b = b_max == 0 or b < policy.beta_threshold_fraction * b_max
        small_v = v_max == 0 or v < policy.variance_threshold_fraction * v_max
        out.append(STANDARDIZE if small_b and small_v else EXPOSE)
    return out


def classify_parameters(
    technique_id: str,
    space: HyperparameterSpace,
    fit: LinearFit,
    per_model: PerModelFits,
    policy: ExposurePolicy = ExposurePolicy(),
) -> SensitivityReport:
    cols = design_columns(space)
    decisions_by_col = column_decisions(fit.beta, per_model.variance, policy)
    entries = []
    for j, ((col, dim), decision) in enumerate(zip(cols, decisions_by_col)):
        entries.append(
            SensitivityEntry(
                column=col,
                dim=dim,
                global_beta=float(fit.beta[j]),
                per_model_betas={m: float(b[j]) for m, b in per_model.betas.items()},
                cross_model_variance=float(per_model.variance[j]),
                decision=decision,
            )
        )
    decisions = {}
    for d in space.dims:
        cols_for_dim = [e.decision for e in entries if e.dim == d.name]
        # a categorical with a single value has no columns and nothing to tune
        decisions[d.name] = EXPOSE if EXPOSE in cols_for_dim else STANDARDIZE
    return SensitivityReport(
        technique_id=technique_id,
        entries=tuple(entries),
        decisions=decisions,
        intercept=fit.intercept,
        residual_norm=fit.residual_norm,
        trial_count=fit.trial_count,
        policy=policy,
        excluded_models=per_model.excluded,
    )


def analyze_sensitivity(
    technique_id: str,
    trials: Sequence,
    space: HyperparameterSpace,
    policy: ExposurePolicy = ExposurePolicy(),
) -> SensitivityReport:
    """Global fit, per-model fits and classification for one technique."""
    trials = [r for r in trials if r.technique_id == technique_id]
    fit = fit_linear_surrogate(trials, space)
    per_model = per_model_sensitivities(trials, space)
    return classify_parameters(technique_id, space, fit, per_model, policy)

