from fleetopt.core import (
    Categorical,
    Continuous,
    Dim,
    Fleet,
    HyperparameterSpace,
    Integer,
    ModelDescriptor,
    Technique,
    Thresholds,
)
from fleetopt.mmo import ModelOutcome, TrialRecord
from fleetopt.objective import aggregate_delta

LOOSE = Thresholds(alpha=0.0005, epsilon=1.0, tau=0.0005)


def model(mid, baseline=0.7, weight=1.0, **attrs):
    fields = dict(
        ranking_stage="ranking",
        flops=1e8,
        hardware="gpu",
        optimization_event="click",
        product_surface="feed",
        data_constraint="full",
    )
    fields.update(attrs)
    return ModelDescriptor(id=mid, baseline_performance=baseline, weight=weight, **fields)


def fleet_of(n, baseline=0.7):
    return Fleet.from_models([model(f"m{i:02d}", baseline) for i in range(n)])


def unit_space(*names):
    return HyperparameterSpace(tuple(Dim(n, Continuous(0.0, 1.0)) for n in names))


def mixed_space():
    return HyperparameterSpace(
        (
            Dim("lr", Continuous(0.0, 1.0)),
            Dim("layers", Integer(1, 4)),
            Dim("act", Categorical(("relu", "gelu", "silu"))),
        )
    )


def technique(tid="t", space=None):
    return Technique(tid, space if space is not None else unit_space("x", "y"))


class FunctionEvaluator:
    """Evaluator returning ``baseline + f(model_id, config)``."""

    def __init__(self, fleet, fn):
        self.fleet = fleet
        self.fn = fn
        self.calls = 0

    def evaluate(self, model_id, technique_id, config, repeat=0):
        self.calls += 1
        return self.fleet.get(model_id).baseline_performance + self.fn(model_id, technique_id, config)


def record(t, config, deltas, tid="t", thresholds=LOOSE):
    """Trial on uniformly weighted models ``m0..`` with the given deltas."""
    ids = [f"m{i}" for i in range(len(deltas))]
    w = [1 / len(deltas)] * len(deltas)
    return TrialRecord(
        tid,
        t,
        config,
        {m: ModelOutcome(0.7 + d, d) for m, d in zip(ids, deltas)},
        aggregate_delta(list(deltas), w, thresholds),
        0,
        len(deltas),
        "design",
    )
