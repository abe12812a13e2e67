"""Versioned model templates built from generalized techniques.

A version records, per committed technique, which dims are fixed (with their
values) and which stay exposed for per-model tuning (with defaults and
bounds). Versions form a linear chain: each commit names its parent, carries
the parent's techniques forward and supersedes any it re-commits. The chain
is stored as one canonical-JSON version per line.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import Configuration, Fleet, HyperparameterSpace, ModelDescriptor, Thresholds
from .core import validate_configuration
from .errors import (
    DimCoverageGap,
    DuplicateTechnique,
    EvaluatorFailure,
    NonFinite,
    OverrideOnStandardizedDim,
    OverrideOutOfBounds,
    RegistryCorrupt,
    StaleParent,
)
from .jsonio import atomic_write_text, canonical_hash, canonical_json
from .objective import AggregateResult, GeneralizedTechnique, aggregate_delta, performance_delta
from .sensitivity import EXPOSE, STANDARDIZE, SensitivityReport

#: Passing this instead of a sensitivity report fixes every dim of a technique.
EXPOSE_NOTHING = "expose-nothing"


@dataclass(frozen=True)
class CommittedTechnique:
    technique_id: str
    space: HyperparameterSpace
    fixed_config: dict[str, Any]
    exposed: dict[str, Any]  # dim name -> default value

    def resolve(self, overrides: Mapping[str, Any] | None = None) -> Configuration:
        merged = {**self.fixed_config, **self.exposed, **(overrides or {})}
        return self.space.from_dict({n: merged[n] for n in self.space.names})

    def to_json(self) -> dict:
        return {
            "technique_id": self.technique_id,
            "space": self.space.to_json(),
            "fixed_config": dict(self.fixed_config),
            "exposed_params": [
                {"dim": n, "default": v, "bounds": self.space.dim(n).bounds_json()} for n, v in self.exposed.items()
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CommittedTechnique":
        return cls(
            technique_id=obj["technique_id"],
            space=HyperparameterSpace.from_json(obj["space"]),
            fixed_config=dict(obj["fixed_config"]),
            exposed={p["dim"]: p["default"] for p in obj["exposed_params"]},
        )


@dataclass(frozen=True)
class TemplateVersion:
    version_id: int
    parent: int | None
    committed: tuple[CommittedTechnique, ...]
    provenance: dict = field(default_factory=dict)
    created_at: str = ""

    def technique(self, technique_id: str) -> CommittedTechnique:
        for c in self.committed:
            if c.technique_id == technique_id:
                return c
        raise KeyError(technique_id)

    @property
    def technique_ids(self) -> tuple[str, ...]:
        return tuple(c.technique_id for c in self.committed)

    def to_json(self) -> dict:
        return {
            "version_id": self.version_id,
            "parent": self.parent,
            "committed": [c.to_json() for c in self.committed],
            "provenance": dict(self.provenance),
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TemplateVersion":
        return cls(
            version_id=int(obj["version_id"]),
            parent=obj["parent"],
            committed=tuple(CommittedTechnique.from_json(c) for c in obj["committed"]),
            provenance=dict(obj.get("provenance", {})),
            created_at=obj.get("created_at", ""),
        )

    def content_hash(self) -> str:
        return canonical_hash(self.to_json())


def check_partition(version: TemplateVersion) -> None:
    """Fixed and exposed dims must split each technique's dims exactly."""
    seen = set()
    for c in version.committed:
        if c.technique_id in seen:
            raise DuplicateTechnique(f"v{version.version_id}: {c.technique_id} committed twice")
        seen.add(c.technique_id)
        names = set(c.space.names)
        fixed, exposed = set(c.fixed_config), set(c.exposed)
        if fixed & exposed:
            raise DimCoverageGap(f"{c.technique_id}: dims both fixed and exposed: {sorted(fixed & exposed)}")
        if fixed | exposed != names:
            missing = sorted(names - fixed - exposed)
            extra = sorted((fixed | exposed) - names)
            raise DimCoverageGap(f"{c.technique_id}: uncovered dims {missing}, unknown dims {extra}")
        report = validate_configuration(c.space, c.resolve())
        if not report.ok:
            raise DimCoverageGap(f"{c.technique_id}: {'; '.join(report.violations)}")


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


def commit_version(
    parent: TemplateVersion | None,
    generalized: Sequence[GeneralizedTechnique],
    sensitivity: Mapping[str, SensitivityReport | str],
    spaces: Mapping[str, HyperparameterSpace],
    provenance: Mapping | None = None,
    created_at: str | None = None,
) -> TemplateVersion:
    """Create the child of ``parent`` that adds (or supersedes) ``generalized``.

    Each technique's standardized dims are fixed at its optimum; the exposed
    dims keep the optimum as their default.
    """
    ids = [g.technique_id for g in generalized]
    dupes = sorted({t for t in ids if ids.count(t) > 1})
    if dupes:
        raise DuplicateTechnique(f"techniques committed twice in one version: {dupes}")
    new = []
    for g in generalized:
        space = spaces[g.technique_id]
        report = sensitivity.get(g.technique_id)
        if report is None:
            raise DimCoverageGap(f"{g.technique_id}: no sensitivity report (pass EXPOSE_NOTHING to fix all dims)")
        values = space.as_dict(g.optimal_config)
        if report == EXPOSE_NOTHING:
            decisions = {n: STANDARDIZE for n in space.names}
        else:
            decisions = dict(report.decisions)
        gap = [n for n in space.names if n not in decisions]
        if gap:
            raise DimCoverageGap(f"{g.technique_id}: no decision for dims {gap}")
        new.append(
            CommittedTechnique(
                technique_id=g.technique_id,
                space=space,
                fixed_config={n: values[n] for n in space.names if decisions[n] == STANDARDIZE},
                exposed={n: values[n] for n in space.names if decisions[n] == EXPOSE},
            )
        )
    carried = [c for c in (parent.committed if parent else ()) if c.technique_id not in set(ids)]
    version = TemplateVersion(
        version_id=1 if parent is None else parent.version_id + 1,
        parent=None if parent is None else parent.version_id,
        committed=tuple(sorted(carried + new, key=lambda c: c.technique_id)),
        provenance=dict(provenance or {}),
        created_at=_utc_now() if created_at is None else created_at,
    )
    check_partition(version)
    return version


@dataclass(frozen=True)
class ModelInstance:
    model_id: str
    template_version_id: int
    resolved_configs: dict[str, Configuration]
    model_inputs: Any = None

    def to_json(self, version: TemplateVersion) -> dict:
        return {
            "model_id": self.model_id,
            "template_version_id": self.template_version_id,
            "resolved_configs": {
                tid: version.technique(tid).space.as_dict(cfg) for tid, cfg in sorted(self.resolved_configs.items())
            },
            "model_inputs": self.model_inputs,
        }


def instantiate_model(
    version: TemplateVersion,
    model: ModelDescriptor,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
    model_inputs: Any = None,
) -> ModelInstance:
    """Resolve every committed technique for one model.

    ``overrides`` maps technique id to ``{dim: value}`` and may only touch
    exposed dims. ``model_inputs`` is carried through untouched.
    """
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(version.technique_ids))
    if unknown:
        raise KeyError(f"overrides for techniques not in v{version.version_id}: {unknown}")
    resolved = {}
    for c in version.committed:
        ov = dict(overrides.get(c.technique_id, {}))
        for name, value in ov.items():
            if name in c.fixed_config:
                raise OverrideOnStandardizedDim(f"{c.technique_id}.{name} is standardized")
            if name not in c.exposed:
                raise OverrideOutOfBounds(f"{c.technique_id} has no dim {name!r}")
            if not c.space.dim(name).kind.contains(value):
                raise OverrideOutOfBounds(f"{c.technique_id}.{name}={value!r} outside {c.space.dim(name).bounds_json()}")
        resolved[c.technique_id] = c.resolve(ov)
    return ModelInstance(model.id, version.version_id, resolved, model_inputs)


# --- back-test --------------------------------------------------------------------


@dataclass(frozen=True)
class BacktestResult:
    version_id: int
    per_model: dict[str, float | None]
    errors: dict[str, str]
    aggregate: AggregateResult | None
    passed: bool

    def to_json(self) -> dict:
        return {
            "version_id": self.version_id,
            "per_model": dict(sorted(self.per_model.items())),
            "errors": dict(sorted(self.errors.items())),
            "aggregate": None if self.aggregate is None else self.aggregate.to_json(),
            "passed": self.passed,
        }


def backtest(version: TemplateVersion, fleet: Fleet, evaluator, thresholds: Thresholds) -> BacktestResult:
    """Evaluate each model at the version's defaults.

    A model's delta is the sum of its per-technique deltas (techniques are
    treated as additive). Models whose evaluation fails are recorded and left
    out of the aggregate.
    """
    per_model: dict[str, float | None] = {}
    errors = {}
    for m in fleet:
        inst = instantiate_model(version, m)
        try:
            deltas = []
            for tid, cfg in inst.resolved_configs.items():
                perf = float(evaluator.evaluate(m.id, tid, cfg, 0))
                if not math.isfinite(perf):
                    raise NonFinite(f"non-finite performance for {tid}")
                deltas.append(performance_delta(perf, m.baseline_performance))
            per_model[m.id] = math.fsum(deltas)
        except (EvaluatorFailure, NonFinite) as exc:
            per_model[m.id] = None
            errors[m.id] = f"{type(exc).__name__}: {exc}"
    ok = [m.id for m in fleet if per_model[m.id] is not None]
    aggregate = None
    if ok:
        sub = fleet if len(ok) == len(fleet) else fleet.subset(ok)
        aggregate = aggregate_delta([per_model[i] for i in sub.ids], sub.normalized_weights, thresholds)
    passed = aggregate is not None and aggregate.feasible and aggregate.weighted_mean >= thresholds.tau
    return BacktestResult(version.version_id, per_model, errors, aggregate, passed)


# --- diff -----------------------------------------------------------------------


@dataclass(frozen=True)
class VersionDiff:
    added: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()
    superseded: tuple[str, ...] = ()
    changed_fixed: tuple[tuple[str, str, Any, Any], ...] = ()
    changed_defaults: tuple[tuple[str, str, Any, Any], ...] = ()
    exposure_changes: tuple[tuple[str, str, str], ...] = ()

    @property
    def empty(self) -> bool:
        return not any(
            (self.added, self.removed, self.superseded, self.changed_fixed, self.changed_defaults, self.exposure_changes)
        )

    def to_json(self) -> dict:
        return {
            "added": list(self.added),
            "removed": list(self.removed),
            "superseded": list(self.superseded),
            "changed_fixed": [list(x) for x in self.changed_fixed],
            "changed_defaults": [list(x) for x in self.changed_defaults],
            "exposure_changes": [list(x) for x in self.exposure_changes],
        }


def diff_versions(a: TemplateVersion, b: TemplateVersion) -> VersionDiff:
    ta = {c.technique_id: c for c in a.committed}
    tb = {c.technique_id: c for c in b.committed}
    superseded, fixed, defaults, exposure = [], [], [], []
    for tid in sorted(set(ta) & set(tb)):
        ca, cb = ta[tid], tb[tid]
        if ca.to_json() == cb.to_json():
            continue
        superseded.append(tid)
        for name in sorted(set(ca.space.names) | set(cb.space.names)):
            if name in ca.fixed_config and name in cb.fixed_config:
                if ca.fixed_config[name] != cb.fixed_config[name]:
                    fixed.append((tid, name, ca.fixed_config[name], cb.fixed_config[name]))
            elif name in ca.exposed and name in cb.exposed:
                if ca.exposed[name] != cb.exposed[name]:
                    defaults.append((tid, name, ca.exposed[name], cb.exposed[name]))
            else:
                before = "fixed" if name in ca.fixed_config else "exposed" if name in ca.exposed else "absent"
                after = "fixed" if name in cb.fixed_config else "exposed" if name in cb.exposed else "absent"
                exposure.append((tid, name, f"{before}->{after}"))
    return VersionDiff(
        added=tuple(sorted(set(tb) - set(ta))),
        removed=tuple(sorted(set(ta) - set(tb))),
        superseded=tuple(superseded),
        changed_fixed=tuple(fixed),
        changed_defaults=tuple(defaults),
        exposure_changes=tuple(exposure),
    )


# --- registry -------------------------------------------------------------------


class TemplateRegistry:
    """Append-only version chain persisted as JSON lines at ``path``.

    Every load re-checks the chain (ids 1..n, each parent the previous
    version) and the fixed/exposed partition of every version.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._versions: list[TemplateVersion] = []
        if self.path.exists():
            self._versions = self._load()

    def _load(self) -> list[TemplateVersion]:
        versions = []
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                v = TemplateVersion.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RegistryCorrupt(f"{self.path}:{lineno}: {exc}") from None
            expected_parent = versions[-1].version_id if versions else None
            if v.parent != expected_parent or v.version_id != len(versions) + 1:
                raise RegistryCorrupt(
                    f"{self.path}:{lineno}: version {v.version_id} (parent {v.parent}) breaks the chain"
                )
            try:
                check_partition(v)
            except (DimCoverageGap, DuplicateTechnique) as exc:
                raise RegistryCorrupt(f"{self.path}:{lineno}: {exc}") from None
            versions.append(v)
        return versions

    @property
    def versions(self) -> tuple[TemplateVersion, ...]:
        return tuple(self._versions)

    def latest(self) -> TemplateVersion | None:
        return self._versions[-1] if self._versions else None

    def get(self, version_id: int) -> TemplateVersion:
        if not 1 <= version_id <= len(self._versions):
            raise KeyError(f"no template version {version_id}")
        return self._versions[version_id - 1]

    def commit(self, version: TemplateVersion) -> None:
        """Append ``version``; it must be the child of the current head."""
        head = self.latest()
        head_id = None if head is None else head.version_id
        if version.parent != head_id:
            raise StaleParent(f"version parent {version.parent} is not the registry head {head_id}")
        check_partition(version)
        lines = [canonical_json(v.to_json()) + "\n" for v in self._versions + [version]]
        atomic_write_text(self.path, "".join(lines))
        self._versions.append(version)

    def replay_hash(self) -> str:
        """sha256 over the canonical serialization of every version in order."""
        return canonical_hash([v.to_json() for v in self._versions])
