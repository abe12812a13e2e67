"""Shared domain vocabulary: fleet members, hyperparameter spaces, thresholds.

Every type here is immutable. Performance is higher-is-better everywhere and
percentages are stored as fractions (0.05% -> 0.0005).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence, Union

from .errors import (
    AllZeroWeights,
    DegenerateFleet,
    InvalidConfiguration,
    NegativeWeight,
)

RANKING_STAGES = ("retrieval", "pre_ranking", "ranking")
HARDWARE = ("cpu", "gpu", "mtia")
DATA_CONSTRAINTS = ("full", "restricted", "regional")


@dataclass(frozen=True)
class ModelDescriptor:
    """One fleet member: its six clustering attributes, baseline and weight."""

    id: str
    ranking_stage: str
    flops: float
    hardware: str
    optimization_event: str
    product_surface: str
    data_constraint: str
    baseline_performance: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.id:
            raise ValueError("model id must be nonempty")
        if self.ranking_stage not in RANKING_STAGES:
            raise ValueError(f"{self.id}: ranking_stage must be one of {RANKING_STAGES}")
        if self.hardware not in HARDWARE:
            raise ValueError(f"{self.id}: hardware must be one of {HARDWARE}")
        if self.data_constraint not in DATA_CONSTRAINTS:
            raise ValueError(f"{self.id}: data_constraint must be one of {DATA_CONSTRAINTS}")
        if not (self.flops > 0 and math.isfinite(self.flops)):
            raise ValueError(f"{self.id}: flops must be positive and finite")
        if not math.isfinite(self.baseline_performance):
            raise ValueError(f"{self.id}: baseline_performance must be finite")
        if self.weight < 0:
            raise NegativeWeight(f"{self.id}: weight must be >= 0")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "ranking_stage": self.ranking_stage,
            "flops": self.flops,
            "hardware": self.hardware,
            "optimization_event": self.optimization_event,
            "product_surface": self.product_surface,
            "data_constraint": self.data_constraint,
            "baseline_performance": self.baseline_performance,
            "weight": self.weight,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ModelDescriptor":
        return cls(**obj)


def normalize_weights(raw_weights: Sequence[float]) -> tuple[float, ...]:
    """Scale nonnegative weights so they sum to one.

    Raises
    ------
    NegativeWeight
        If any weight is negative.
    AllZeroWeights
        If every weight is zero (or the sequence is empty).
    """
    weights = [float(w) for w in raw_weights]
    if any(w < 0 for w in weights):
        raise NegativeWeight("weights must be nonnegative")
    total = math.fsum(weights)
    if not total > 0:
        raise AllZeroWeights("at least one weight must be strictly positive")
    return tuple(w / total for w in weights)


@dataclass(frozen=True)
class Fleet:
    models: tuple[ModelDescriptor, ...]
    normalized_weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.models) != len(self.normalized_weights):
            raise ValueError("models and normalized_weights differ in length")
        ids = [m.id for m in self.models]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate model ids: {dupes}")
        if self.models and abs(math.fsum(self.normalized_weights) - 1.0) > 1e-12:
            raise ValueError("normalized_weights must sum to 1")

    @classmethod
    def from_models(cls, models: Iterable[ModelDescriptor]) -> "Fleet":
        models = tuple(models)
        if not models:
            raise DegenerateFleet("fleet must contain at least one model")
        return cls(models, normalize_weights([m.weight for m in models]))

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.models)

    def get(self, model_id: str) -> ModelDescriptor:
        for m in self.models:
            if m.id == model_id:
                return m
        raise KeyError(model_id)

    def subset(self, ids: Iterable[str]) -> "Fleet":
        """Sub-fleet in the given id order, with weights renormalized."""
        lookup = {m.id: m for m in self.models}
        return Fleet.from_models(lookup[i] for i in ids)

    def to_json(self) -> list:
        return [m.to_json() for m in self.models]

    @classmethod
    def from_json(cls, obj: Sequence[Mapping[str, Any]]) -> "Fleet":
        return cls.from_models(ModelDescriptor.from_json(o) for o in obj)


# --- hyperparameter spaces -------------------------------------------------


@dataclass(frozen=True)
class Continuous:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"Continuous needs finite lo < hi, got ({self.lo}, {self.hi})")

    def contains(self, value) -> bool:
        return (
            isinstance(value, (int, float))
            and not isinstance(value, bool)
            and math.isfinite(value)
            and self.lo <= value <= self.hi
        )


@dataclass(frozen=True)
class Integer:
    lo: int
    hi: int

    def __post_init__(self):
        if not (isinstance(self.lo, int) and isinstance(self.hi, int) and self.lo <= self.hi):
            raise ValueError(f"Integer needs int lo <= hi, got ({self.lo}, {self.hi})")

    def contains(self, value) -> bool:
        return isinstance(value, int) and not isinstance(value, bool) and self.lo <= value <= self.hi


@dataclass(frozen=True)
class Categorical:
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("Categorical needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError("Categorical values must be distinct")

    def contains(self, value) -> bool:
        return isinstance(value, str) and value in self.values


DimKind = Union[Continuous, Integer, Categorical]


@dataclass(frozen=True)
class Dim:
    name: str
    kind: DimKind

    def bounds_json(self) -> dict:
        k = self.kind
        if isinstance(k, Categorical):
            return {"values": list(k.values)}
        return {"lo": k.lo, "hi": k.hi}

    def to_json(self) -> dict:
        kind = {Continuous: "continuous", Integer: "integer", Categorical: "categorical"}[type(self.kind)]
        return {"name": self.name, "type": kind, **self.bounds_json()}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Dim":
        kind = obj.get("type")
        extra = set(obj) - {"name", "type", "lo", "hi", "values"}
        if extra:
            raise ValueError(f"unknown keys in dim: {sorted(extra)}")
        if kind == "continuous":
            return cls(obj["name"], Continuous(float(obj["lo"]), float(obj["hi"])))
        if kind == "integer":
            return cls(obj["name"], Integer(int(obj["lo"]), int(obj["hi"])))
        if kind == "categorical":
            return cls(obj["name"], Categorical(tuple(obj["values"])))
        raise ValueError(f"unknown dim type {kind!r}")


@dataclass(frozen=True)
class Configuration:
    """One value per dimension, in the space's dim order."""

    values: tuple

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class HyperparameterSpace:
    dims: tuple[Dim, ...]

    def __post_init__(self):
        if not self.dims:
            raise ValueError("a hyperparameter space needs at least one dim")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError(f"dim names must be distinct: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def __len__(self):
        return len(self.dims)

    def dim(self, name: str) -> Dim:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    def as_dict(self, config: Configuration) -> dict:
        return dict(zip(self.names, config.values))

    def from_dict(self, mapping: Mapping[str, Any]) -> Configuration:
        missing = [n for n in self.names if n not in mapping]
        extra = [k for k in mapping if k not in self.names]
        if missing or extra:
            raise InvalidConfiguration(f"config keys mismatch: missing={missing} extra={extra}")
        values = []
        for d in self.dims:
            v = mapping[d.name]
            # JSON has a single number type; restore ints for integer dims.
            if isinstance(d.kind, Integer) and isinstance(v, float) and v.is_integer():
                v = int(v)
            values.append(v)
        return Configuration(tuple(values))

    def to_json(self) -> list:
        return [d.to_json() for d in self.dims]

    @classmethod
    def from_json(cls, obj: Sequence[Mapping[str, Any]]) -> "HyperparameterSpace":
        return cls(tuple(Dim.from_json(o) for o in obj))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_configuration(space: HyperparameterSpace, config: Configuration) -> ValidationReport:
    """Check arity and per-dim bounds; never raises."""
    values = tuple(config.values) if isinstance(config, Configuration) else tuple(config)
    if len(values) != len(space.dims):
        return ValidationReport(
            (f"arity mismatch: expected {len(space.dims)} values, got {len(values)}",)
        )
    bad = tuple(
        f"{d.name} out of bounds: {v!r}" for d, v in zip(space.dims, values) if not d.kind.contains(v)
    )
    return ValidationReport(bad)


@dataclass(frozen=True)
class Technique:
    id: str
    space: HyperparameterSpace
    evaluator_binding: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("technique id must be nonempty")

    def to_json(self) -> dict:
        out = {"id": self.id, "space": self.space.to_json()}
        if self.evaluator_binding is not None:
            out["evaluator_binding"] = self.evaluator_binding
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Technique":
        extra = set(obj) - {"id", "space", "evaluator_binding"}
        if extra:
            raise ValueError(f"unknown keys in technique: {sorted(extra)}")
        return cls(obj["id"], HyperparameterSpace.from_json(obj["space"]), obj.get("evaluator_binding"))


@dataclass(frozen=True)
class Thresholds:
    """Regression significance ``alpha``, allowed regression rate ``epsilon``
    and admission threshold ``tau``, all as fractions."""

    alpha: float = 0.0005
    epsilon: float = 0.1
    tau: float = 0.0005

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "epsilon": self.epsilon, "tau": self.tau}


def format_fraction(x: float) -> str:
    """Render a fractional delta in both forms, e.g. ``0.0063 (0.63%)``."""
    return f"{x:.6g} ({100 * x:.4g}%)"


__all__ = [
    "Categorical",
    "Configuration",
    "Continuous",
    "Dim",
    "Fleet",
    "HyperparameterSpace",
    "Integer",
    "ModelDescriptor",
    "Technique",
    "Thresholds",
    "ValidationReport",
    "format_fraction",
    "normalize_weights",
    "validate_configuration",
]
