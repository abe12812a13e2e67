"""Multi-model optimization: tune each technique jointly across the
representative fleet, then validate on held-out models.

For every technique the loop is: initial design, then one acquisition per
step from a GP fit to the feasible trials so far. Each proposed configuration
is evaluated on every representative model and scored with
:func:`fleetopt.objective.aggregate_delta`. The technique's optimum is the best
*visited* feasible configuration; it is admitted when that score reaches tau.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .bayesopt import AcquisitionSpec, acquire, fit_feasibility, fit_surrogate, initial_design
from .core import Configuration, Fleet, HyperparameterSpace, Technique, Thresholds
from .errors import EvaluatorFailure, InsufficientFeasibleTrials, NonFinite, SingularGram
from .objective import (
    AggregateResult,
    GeneralizedTechnique,
    aggregate_delta,
    feasibility_margin,
    performance_delta,
    select_generalized,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INFEASIBLE_EVERYWHERE = "infeasible-everywhere"
BELOW_TAU = "below-tau"


def derive_seed(*parts: int) -> int:
    """Stable 32-bit child seed for a tuple of nonnegative ints."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class MmoConfig:
    iterations_per_technique: int = 50
    thresholds: Thresholds = field(default_factory=Thresholds)
    seed: int = 0
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    evaluation_repeats: int = 1
    workers: int = 1
    surrogate_starts: int = 16

    def __post_init__(self):
        if self.evaluation_repeats < 1:
            raise ValueError("evaluation_repeats must be >= 1")
        if self.iterations_per_technique < 1:
            raise ValueError("iterations_per_technique must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json(self) -> dict:
        return {
            "iterations_per_technique": self.iterations_per_technique,
            "thresholds": self.thresholds.to_json(),
            "seed": self.seed,
            "acquisition": self.acquisition.to_json(),
            "evaluation_repeats": self.evaluation_repeats,
            "workers": self.workers,
            "surrogate_starts": self.surrogate_starts,
        }


@dataclass(frozen=True)
class ModelOutcome:
    performance: float | None = None
    delta: float | None = None
    variance: float | None = None
    error: str | None = None

    def to_json(self) -> dict:
        out = {}
        if self.error is not None:
            out["error"] = self.error
        else:
            out["performance"] = self.performance
            out["delta"] = self.delta
        if self.variance is not None:
            out["variance"] = self.variance
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelOutcome":
        return cls(obj.get("performance"), obj.get("delta"), obj.get("variance"), obj.get("error"))


@dataclass(frozen=True)
class TrialRecord:
    technique_id: str
    t: int
    config: Configuration
    per_model: dict[str, ModelOutcome]
    aggregate: AggregateResult | None
    seed: int
    evaluations: int
    source: str  # "design" or "acquisition"
    error: str | None = None
    wall_time: float | None = field(default=None, compare=False)

    @property
    def valid(self) -> bool:
        return self.aggregate is not None

    @property
    def feasible(self) -> bool:
        return self.aggregate is not None and self.aggregate.feasible

    def to_json(self, space: HyperparameterSpace, with_timing: bool = False) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "technique_id": self.technique_id,
            "t": self.t,
            "config": space.as_dict(self.config),
            "per_model": {k: v.to_json() for k, v in self.per_model.items()},
            "aggregate": None if self.aggregate is None else self.aggregate.to_json(),
            "seed": self.seed,
            "evaluations": self.evaluations,
            "source": self.source,
        }
        if self.error is not None:
            out["error"] = self.error
        if with_timing and self.wall_time is not None:
            out["wall_time"] = self.wall_time
        return out

    @classmethod
    def from_json(cls, obj: Mapping, space: HyperparameterSpace) -> "TrialRecord":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trial-log schema_version {obj.get('schema_version')!r}")
        agg = obj.get("aggregate")
        return cls(
            technique_id=obj["technique_id"],
            t=int(obj["t"]),
            config=space.from_dict(obj["config"]),
            per_model={k: ModelOutcome.from_json(v) for k, v in obj["per_model"].items()},
            aggregate=None if agg is None else AggregateResult.from_json(agg),
            seed=int(obj["seed"]),
            evaluations=int(obj["evaluations"]),
            source=obj["source"],
            error=obj.get("error"),
            wall_time=obj.get("wall_time"),
        )


@dataclass(frozen=True)
class BestTrial:
    t: int
    config: Configuration
    aggregate: AggregateResult


@dataclass(frozen=True)
class Rejection:
    technique_id: str
    reason: str
    best_aggregate: float | None = None


@dataclass
class MmoReport:
    generalized: list[GeneralizedTechnique]
    rejected: list[Rejection]
    best: dict[str, BestTrial | None]
    trial_log: list[TrialRecord]
    evaluation_count: int
    representative_ids: tuple[str, ...]
    thresholds: Thresholds
    techniques: dict[str, Technique] = field(default_factory=dict)

    def to_json(self) -> dict:
        def cfg(tid, c):
            return self.techniques[tid].space.as_dict(c)

        return {
            "generalized": [
                {
                    "technique_id": g.technique_id,
                    "optimal_config": cfg(g.technique_id, g.optimal_config),
                    "optimal_performance": g.optimal_performance,
                }
                for g in self.generalized
            ],
            "rejected": [
                {"technique_id": r.technique_id, "reason": r.reason, "best_aggregate": r.best_aggregate}
                for r in self.rejected
            ],
            "best": {
                tid: None
                if b is None
                else {"t": b.t, "config": cfg(tid, b.config), "aggregate": b.aggregate.to_json()}
                for tid, b in self.best.items()
            },
            "evaluation_count": self.evaluation_count,
            "trial_count": len(self.trial_log),
            "representative_ids": list(self.representative_ids),
            "thresholds": self.thresholds.to_json(),
        }


# --- evaluation of one trial -------------------------------------------------------


def _evaluate_model(evaluator, model, technique_id, config, repeats):
    try:
        perfs = [float(evaluator.evaluate(model.id, technique_id, config, r)) for r in range(repeats)]
        if not all(math.isfinite(p) for p in perfs):
            raise NonFinite(f"non-finite performance {perfs}")
    except (EvaluatorFailure, NonFinite) as exc:
        return ModelOutcome(error=f"{type(exc).__name__}: {exc}")
    perf = math.fsum(perfs) / repeats
    variance = None
    if repeats > 1:
        variance = math.fsum((p - perf) ** 2 for p in perfs) / repeats
    return ModelOutcome(perf, performance_delta(perf, model.baseline_performance), variance)


def evaluate_configuration(
    technique_id: str,
    config: Configuration,
    fleet: Fleet,
    evaluator,
    thresholds: Thresholds,
    repeats: int = 1,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[dict[str, ModelOutcome], AggregateResult | None, str | None]:
    """Evaluate ``config`` on every model of ``fleet`` and aggregate.

    All models are evaluated even when some fail; the aggregate is only
    computed from a complete set of outcomes.
    """
    if executor is None:
        outcomes = [_evaluate_model(evaluator, m, technique_id, config, repeats) for m in fleet]
    else:
        outcomes = list(
            executor.map(lambda m: _evaluate_model(evaluator, m, technique_id, config, repeats), fleet.models)
        )
    per_model = dict(zip(fleet.ids, outcomes))
    failed = [mid for mid, o in per_model.items() if o.error is not None]
    if failed:
        return per_model, None, f"evaluation failed for {len(failed)} model(s): {', '.join(failed)}"
    deltas = [o.delta for o in outcomes]
    return per_model, aggregate_delta(deltas, fleet.normalized_weights, thresholds), None


def replay_record(record: TrialRecord, fleet: Fleet, thresholds: Thresholds) -> None:
    """Recompute deltas and the aggregate of a logged trial; raise on any mismatch."""
    if set(record.per_model) != set(fleet.ids) or len(record.per_model) != len(fleet):
        raise ValueError(f"{record.technique_id} t={record.t}: per-model ids differ from the representative set")
    if record.aggregate is None:
        return
    deltas = []
    for m in fleet:
        o = record.per_model[m.id]
        d = performance_delta(o.performance, m.baseline_performance)
        if d != o.delta:
            raise ValueError(f"{record.technique_id} t={record.t}: delta mismatch for {m.id}")
        deltas.append(d)
    again = aggregate_delta(deltas, fleet.normalized_weights, thresholds)
    if again != record.aggregate:
        raise ValueError(f"{record.technique_id} t={record.t}: aggregate mismatch on replay")


# --- the optimization loop --------------------------------------------------------


def best_trial(records: Iterable[TrialRecord]) -> BestTrial | None:
    """Highest feasible aggregate among valid trials; earliest t on ties."""
    best = None
    for r in records:
        if r.feasible and (best is None or r.aggregate.weighted_mean > best.aggregate.weighted_mean):
            best = BestTrial(r.t, r.config, r.aggregate)
    return best


def _margins(records: Sequence[TrialRecord], reps: Fleet, thresholds: Thresholds) -> list[float] | None:
    out = []
    for r in records:
        m = feasibility_margin([r.per_model[mid].delta for mid in reps.ids], thresholds)
        if m is None:
            return None
        out.append(m)
    return out


def _optimize_technique(
    index: int,
    technique: Technique,
    reps: Fleet,
    evaluator,
    config: MmoConfig,
    prior: Sequence[TrialRecord],
    executor,
    on_record: Callable[[TrialRecord], None] | None,
) -> list[TrialRecord]:
    space = technique.space
    n_total = config.iterations_per_technique
    n_design = config.acquisition.design_size(space)
    if n_total < n_design:
        raise ValueError(
            f"{technique.id}: iterations_per_technique={n_total} is below the initial design size {n_design}"
        )
    seed = derive_seed(config.seed, index)
    explore = initial_design(space, n_design, derive_seed(seed, 0)) + initial_design(
        space, max(n_total - n_design, 1), derive_seed(seed, 1)
    )
    records = list(prior)
    for expected_t, r in enumerate(records, start=1):
        if r.t != expected_t:
            raise ValueError(f"{technique.id}: trial log is not contiguous at t={r.t}")
        replay_record(r, reps, config.thresholds)
    n_explored = sum(r.source == "design" for r in records)

    for t in range(len(records) + 1, n_total + 1):
        step_seed = derive_seed(seed, 2, t)
        feasible = [(r.config, r.aggregate) for r in records if r.feasible]
        proposal = None
        if t > n_design and len({c.values for c, _ in feasible}) >= 2:
            try:
                model = fit_surrogate(feasible, space, seed=step_seed, n_starts=config.surrogate_starts)
                valid = [r for r in records if r.valid]
                feas_model = fit_feasibility(
                    [r.config for r in valid],
                    [r.feasible for r in valid],
                    space,
                    margins=_margins(valid, reps, config.thresholds),
                    seed=step_seed,
                    n_starts=max(1, config.surrogate_starts // 4),
                )
                incumbent = max(a.weighted_mean for _, a in feasible)
                proposal = acquire(model, feas_model, space, incumbent, config.acquisition, step_seed)
                source = "acquisition"
            except (SingularGram, InsufficientFeasibleTrials) as exc:
                log.warning("%s t=%d: surrogate unavailable (%s); exploring", technique.id, t, exc)
        if proposal is None:
            proposal = explore[n_explored]
            n_explored += 1
            source = "design"

        start = time.perf_counter()
        per_model, aggregate, error = evaluate_configuration(
            technique.id,
            proposal,
            reps,
            evaluator,
            config.thresholds,
            config.evaluation_repeats,
            executor,
        )
        record = TrialRecord(
            technique_id=technique.id,
            t=t,
            config=proposal,
            per_model=per_model,
            aggregate=aggregate,
            seed=step_seed,
            evaluations=len(reps) * config.evaluation_repeats,
            source=source,
            error=error,
            wall_time=time.perf_counter() - start,
        )
        records.append(record)
        if on_record is not None:
            on_record(record)
        log.debug("%s t=%d %s", technique.id, t, aggregate)
    return records


def run_mmo(
    techniques: Sequence[Technique],
    representatives: Fleet,
    evaluator,
    config: MmoConfig,
    resume: Sequence[TrialRecord] = (),
    on_record: Callable[[TrialRecord], None] | None = None,
) -> MmoReport:
    """Run multi-model optimization for each technique in input order.

    ``resume`` holds previously logged trials; they are replayed (and checked)
    and the loop continues at the next step. ``on_record`` sees each new trial
    as soon as it is complete.
    """
    if len(representatives) == 0:
        raise ValueError("representatives must be nonempty")
    ids = [t.id for t in techniques]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate technique ids: {ids}")
    by_technique: dict[str, list[TrialRecord]] = {tid: [] for tid in ids}
    for r in resume:
        if r.technique_id not in by_technique:
            raise ValueError(f"resume log mentions unknown technique {r.technique_id!r}")
        by_technique[r.technique_id].append(r)

    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        trial_log: list[TrialRecord] = []
        for index, technique in enumerate(techniques):
            trial_log.extend(
                _optimize_technique(
                    index,
                    technique,
                    representatives,
                    evaluator,
                    config,
                    by_technique[technique.id],
                    executor,
                    on_record,
                )
            )
    finally:
        if executor is not None:
            executor.shutdown()
    return build_report(techniques, representatives, trial_log, config.thresholds)


def build_report(
    techniques: Sequence[Technique],
    representatives: Fleet,
    trial_log: Sequence[TrialRecord],
    thresholds: Thresholds,
) -> MmoReport:
    """Select optima, admissions and rejections from a finished trial log."""
    best: dict[str, BestTrial | None] = {}
    for technique in techniques:
        best[technique.id] = best_trial(r for r in trial_log if r.technique_id == technique.id)
    generalized = select_generalized(
        {tid: (b.config, b.aggregate) for tid, b in best.items() if b is not None}, thresholds.tau
    )
    admitted = {g.technique_id for g in generalized}
    rejected = []
    for technique in techniques:
        b = best[technique.id]
        if b is None:
            rejected.append(Rejection(technique.id, INFEASIBLE_EVERYWHERE))
        elif technique.id not in admitted:
            rejected.append(Rejection(technique.id, BELOW_TAU, b.aggregate.weighted_mean))
    return MmoReport(
        generalized=generalized,
        rejected=rejected,
        best=best,
        trial_log=list(trial_log),
        evaluation_count=sum(r.evaluations for r in trial_log),
        representative_ids=representatives.ids,
        thresholds=thresholds,
        techniques={t.id: t for t in techniques},
    )


# --- holdout validation ----------------------------------------------------------


@dataclass(frozen=True)
class HoldoutResult:
    technique_id: str
    config: Configuration
    per_model: dict[str, ModelOutcome]
    aggregate: AggregateResult | None
    transfer: bool
    error: str | None = None

    def to_json(self, space: HyperparameterSpace) -> dict:
        out = {
            "technique_id": self.technique_id,
            "config": space.as_dict(self.config),
            "per_model": {k: v.to_json() for k, v in self.per_model.items()},
            "aggregate": None if self.aggregate is None else self.aggregate.to_json(),
            "transfer": self.transfer,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


def validate_holdout(
    generalized: Sequence[GeneralizedTechnique],
    holdout: Fleet,
    evaluator,
    thresholds: Thresholds,
    repeats: int = 1,
) -> list[HoldoutResult]:
    """Evaluate each admitted technique at its fixed optimum on the holdout models.

    Models whose evaluation fails are reported and left out of the aggregate.
    """
    results = []
    for g in generalized:
        outcomes = {m.id: _evaluate_model(evaluator, m, g.technique_id, g.optimal_config, repeats) for m in holdout}
        ok = [m for m in holdout if outcomes[m.id].error is None]
        error = None
        aggregate = None
        if len(ok) < len(holdout):
            error = f"evaluation failed for {len(holdout) - len(ok)} holdout model(s)"
        if ok:
            sub = holdout.subset(m.id for m in ok) if len(ok) < len(holdout) else holdout
            aggregate = aggregate_delta([outcomes[m.id].delta for m in sub], sub.normalized_weights, thresholds)
        transfer = aggregate is not None and aggregate.feasible and aggregate.weighted_mean >= thresholds.tau
        results.append(HoldoutResult(g.technique_id, g.optimal_config, outcomes, aggregate, transfer, error))
    return results


# --- cost accounting --------------------------------------------------------------


@dataclass(frozen=True)
class CostSummary:
    template_evaluations: int
    model_instantiations: int
    fragmented_bound: int
    technique_count: int
    fleet_size: int

    def to_json(self) -> dict:
        return {
            "template_evaluations": self.template_evaluations,
            "model_instantiations": self.model_instantiations,
            "fragmented_bound": self.fragmented_bound,
            "technique_count": self.technique_count,
            "fleet_size": self.fleet_size,
        }


def iteration_cost_summary(report: MmoReport, fleet_size: int, technique_count: int) -> CostSummary:
    """Evaluations spent on template iteration (from the log), the ``n``
    model instantiations that follow, and the ``n * 2**k`` per-model
    combination bound of fragmented iteration."""
    return CostSummary(
        template_evaluations=sum(r.evaluations for r in report.trial_log),
        model_instantiations=fleet_size,
        fragmented_bound=fleet_size * 2**technique_count,
        technique_count=technique_count,
        fleet_size=fleet_size,
    )
