"""Evaluation backends.

* :class:`SyntheticBackend` - quadratic-bowl responses per (model, technique)
  whose maxima are known in closed form; the test oracle for everything else.
* :class:`CommandEvaluator` - runs an external program per evaluation and
  speaks one JSON request / one JSON response over stdin/stdout.
* :func:`grid_oracle` - exhaustive aggregate maximization on a regular grid.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .bayesopt import encode_config, encoded_width
from .core import (
    DATA_CONSTRAINTS,
    HARDWARE,
    RANKING_STAGES,
    Categorical,
    Configuration,
    Fleet,
    HyperparameterSpace,
    Integer,
    ModelDescriptor,
    Technique,
    Thresholds,
)
from .errors import (
    ExternalCommandFailed,
    GridTooLarge,
    InvalidSpec,
    UnknownModel,
    UnknownTechnique,
)
from .objective import AggregateResult, aggregate_batch

OPTIMIZATION_EVENTS = ("ctr", "cvr", "quality", "value")
PRODUCT_SURFACES = ("feed", "posts", "search", "reels")
MAX_GRID_POINTS = 10**7


class Evaluator(Protocol):
    def evaluate(self, model_id: str, technique_id: str, config: Configuration, repeat: int) -> float:
        ...


# --- synthetic testbed ------------------------------------------------------------


@dataclass(frozen=True)
class TechniqueResponseSpec:
    """How one technique's responses are drawn across the synthetic fleet.

    ``global_center`` lives in the technique's encoded unit box.
    """

    global_center: tuple[float, ...]
    center_spread: float = 0.0
    peak_delta_range: tuple[float, float] = (0.01, 0.02)
    curvature_range: tuple[float, float] = (0.02, 0.06)
    regressor_fraction: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        lo, hi = self.peak_delta_range
        clo, chi = self.curvature_range
        if not (self.center_spread >= 0 and self.noise_std >= 0):
            raise InvalidSpec("center_spread and noise_std must be >= 0")
        if not (0 <= self.regressor_fraction <= 1):
            raise InvalidSpec("regressor_fraction must lie in [0, 1]")
        if not (lo <= hi and 0 <= clo <= chi):
            raise InvalidSpec("ranges must be ordered (lo <= hi) and curvature nonnegative")

    @classmethod
    def from_json(cls, obj: Mapping) -> "TechniqueResponseSpec":
        obj = dict(obj)
        for key in ("global_center", "peak_delta_range", "curvature_range"):
            if key in obj:
                obj[key] = tuple(obj[key])
        try:
            return cls(**obj)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None

    def to_json(self) -> dict:
        return {
            "global_center": list(self.global_center),
            "center_spread": self.center_spread,
            "peak_delta_range": list(self.peak_delta_range),
            "curvature_range": list(self.curvature_range),
            "regressor_fraction": self.regressor_fraction,
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True)
class SyntheticFleetSpec:
    model_count: int
    techniques: Mapping[str, TechniqueResponseSpec]
    seed: int = 0
    attribute_clusters: int | None = None
    baseline_range: tuple[float, float] = (0.7, 0.8)
    weight_range: tuple[float, float] | None = None
    attribute_layout: str = "equidistant"

    def __post_init__(self):
        if self.attribute_layout not in ("equidistant", "mixed"):
            raise InvalidSpec("attribute_layout must be 'equidistant' or 'mixed'")
        if self.model_count < 1:
            raise InvalidSpec("model_count must be >= 1")
        k = self.clusters
        if not 1 <= k <= self.model_count:
            raise InvalidSpec("attribute_clusters must lie in [1, model_count]")
        if self.weight_range is not None and not 0 <= self.weight_range[0] <= self.weight_range[1]:
            raise InvalidSpec("weight_range must be nonnegative and ordered")

    @property
    def clusters(self) -> int:
        if self.attribute_clusters is not None:
            return self.attribute_clusters
        return max(1, self.model_count // 5)

    @classmethod
    def from_json(cls, obj: Mapping) -> "SyntheticFleetSpec":
        obj = dict(obj)
        try:
            obj["techniques"] = {k: TechniqueResponseSpec.from_json(v) for k, v in obj["techniques"].items()}
            for key in ("baseline_range", "weight_range"):
                if obj.get(key) is not None:
                    obj[key] = tuple(obj[key])
            return cls(**obj)
        except (TypeError, KeyError) as exc:
            raise InvalidSpec(f"bad synthetic spec: {exc}") from None

    def to_json(self) -> dict:
        return {
            "model_count": self.model_count,
            "techniques": {k: v.to_json() for k, v in sorted(self.techniques.items())},
            "seed": self.seed,
            "attribute_clusters": self.attribute_clusters,
            "baseline_range": list(self.baseline_range),
            "weight_range": None if self.weight_range is None else list(self.weight_range),
            "attribute_layout": self.attribute_layout,
        }


@dataclass(frozen=True)
class QuadraticResponse:
    """``delta(x) = peak - sum_k curvature_k * (x_k - center_k)**2`` on encoded x."""

    peak: float
    curvature: np.ndarray
    center: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        return self.peak - ((x - self.center) ** 2 * self.curvature).sum(axis=-1)

    @property
    def argmax(self) -> np.ndarray:
        return np.clip(self.center, 0.0, 1.0)


def _noise_key(*parts) -> int:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


@dataclass
class SyntheticBackend:
    """Evaluator with analytically known responses.

    Noise is a keyed pseudo-random function of (seed, model, technique,
    configuration, repeat), so results do not depend on call order.
    """

    fleet: Fleet
    spaces: Mapping[str, HyperparameterSpace]
    responses: Mapping[tuple[str, str], QuadraticResponse]
    noise_std: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    regressors: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self._baselines = {m.id: m.baseline_performance for m in self.fleet}

    def response(self, model_id: str, technique_id: str) -> QuadraticResponse:
        if model_id not in self._baselines:
            raise UnknownModel(model_id)
        if technique_id not in self.spaces:
            raise UnknownTechnique(technique_id)
        return self.responses[(model_id, technique_id)]

    def delta(self, model_id: str, technique_id: str, x) -> np.ndarray | float:
        """Noise-free delta at encoded coordinates ``x``."""
        return self.response(model_id, technique_id)(x)

    def evaluate(self, model_id: str, technique_id: str, config: Configuration, repeat: int = 0) -> float:
        resp = self.response(model_id, technique_id)
        x = encode_config(self.spaces[technique_id], config)
        value = self._baselines[model_id] + float(resp(x))
        sigma = self.noise_std.get(technique_id, 0.0)
        if sigma > 0:
            key = _noise_key(self.seed, model_id, technique_id, list(config.values), repeat)
            value += sigma * float(np.random.default_rng(key).standard_normal())
        return value


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _attribute_combos(rng: np.random.Generator, count: int) -> list[tuple[str, ...]]:
    """Distinct categorical attribute tuples, pairwise differing in >= 2 fields."""
    pool = list(
        itertools.product(RANKING_STAGES, HARDWARE, OPTIMIZATION_EVENTS, PRODUCT_SURFACES, DATA_CONSTRAINTS)
    )
    order = rng.permutation(len(pool))
    chosen: list[tuple[str, ...]] = []
    for i in order:
        cand = pool[i]
        if all(sum(a != b for a, b in zip(cand, c)) >= 2 for c in chosen):
            chosen.append(cand)
            if len(chosen) == count:
                return chosen
    # fall back to plain distinctness when the distance-2 code runs out
    for i in order:
        if pool[i] not in chosen:
            chosen.append(pool[i])
            if len(chosen) == count:
                break
    return chosen


def _cluster_attributes(spec: SyntheticFleetSpec, rng: np.random.Generator):
    """Per-cluster ``(stage, hardware, event, surface, data, log10 flops)``.

    ``equidistant``: every cluster gets its own event and surface tag and
    shares everything else, so cluster centres form a regular simplex in the
    encoded model space. ``mixed``: realistic attribute combinations with a
    distinct FLOPs level per cluster.
    """
    k = spec.clusters
    if spec.attribute_layout == "equidistant":
        stage = RANKING_STAGES[int(rng.integers(len(RANKING_STAGES)))]
        hw = HARDWARE[int(rng.integers(len(HARDWARE)))]
        data = DATA_CONSTRAINTS[int(rng.integers(len(DATA_CONSTRAINTS)))]
        log_flops = float(rng.uniform(6.0, 10.0))
        w = len(str(k - 1))
        return [(stage, hw, f"event_{c:0{w}d}", f"surface_{c:0{w}d}", data, log_flops) for c in range(k)]
    combos = _attribute_combos(rng, k)
    log_flops = 6.0 + 4.0 * (rng.permutation(k) + 0.5) / k
    return [(*combo, float(lf)) for combo, lf in zip(combos, log_flops)]


def generate_synthetic_fleet(
    spec: SyntheticFleetSpec, techniques: Sequence[Technique]
) -> tuple[Fleet, SyntheticBackend]:
    """Draw a clustered fleet and quadratic responses, fully determined by ``spec.seed``.

    Model ``i`` belongs to attribute cluster ``i % spec.clusters``. Members of
    a cluster share their attributes (``mixed`` layout: FLOPs jittered by
    ~2%) and differ in baseline and weight.
    """
    spaces = {t.id: t.space for t in techniques}
    missing = sorted(set(spec.techniques) - set(spaces))
    if missing:
        raise InvalidSpec(f"synthetic spec names unknown techniques: {missing}")
    for tid, tspec in spec.techniques.items():
        if len(tspec.global_center) != encoded_width(spaces[tid]):
            raise InvalidSpec(
                f"{tid}: global_center has {len(tspec.global_center)} coords, "
                f"space encodes to {encoded_width(spaces[tid])}"
            )

    rng = np.random.default_rng(spec.seed)
    k = spec.clusters
    clusters = _cluster_attributes(spec, rng)
    jitter = 0.01 if spec.attribute_layout == "mixed" else 0.0
    models = []
    width = len(str(spec.model_count - 1))
    for i in range(spec.model_count):
        stage, hw, event, surface, data, log_flops = clusters[i % k]
        weight = 1.0 if spec.weight_range is None else float(rng.uniform(*spec.weight_range))
        models.append(
            ModelDescriptor(
                id=f"m{i:0{width}d}",
                ranking_stage=stage,
                flops=float(10 ** (log_flops + jitter * rng.standard_normal())),
                hardware=hw,
                optimization_event=event,
                product_surface=surface,
                data_constraint=data,
                baseline_performance=float(rng.uniform(*spec.baseline_range)),
                weight=weight,
            )
        )
    fleet = Fleet.from_models(models)

    responses = {}
    regressors = {}
    for tid in sorted(spec.techniques):
        tspec = spec.techniques[tid]
        n_reg = _round_half_up(tspec.regressor_fraction * spec.model_count)
        reg_idx = set(rng.permutation(spec.model_count)[:n_reg].tolist())
        regressors[tid] = tuple(models[i].id for i in sorted(reg_idx))
        center = np.asarray(tspec.global_center, dtype=float)
        for i, m in enumerate(models):
            peak = float(rng.uniform(*tspec.peak_delta_range))
            if i in reg_idx:
                peak = -abs(peak)
            curvature = rng.uniform(*tspec.curvature_range, size=center.size)
            offset = rng.uniform(-1.0, 1.0, size=center.size) * tspec.center_spread
            responses[(m.id, tid)] = QuadraticResponse(peak, curvature, center + offset)
    backend = SyntheticBackend(
        fleet=fleet,
        spaces=spaces,
        responses=responses,
        noise_std={tid: s.noise_std for tid, s in spec.techniques.items()},
        seed=spec.seed,
        regressors=regressors,
    )
    return fleet, backend


# --- external command -------------------------------------------------------------


class CommandEvaluator:
    """Evaluate by spawning ``argv`` once per request.

    The child reads one JSON object from stdin::

        {"model_id", "technique_id", "config": {dim: value}, "repeat", "seed"}

    and must print ``{"performance": number}`` or ``{"error": string}`` as the
    last line of stdout. Non-zero exit, malformed output and timeouts raise
    :class:`ExternalCommandFailed`.
    """

    def __init__(
        self,
        argv: Sequence[str],
        spaces: Mapping[str, HyperparameterSpace],
        seed: int = 0,
        timeout_s: float = 300.0,
        max_workers: int | None = None,
    ):
        if not argv:
            raise InvalidSpec("command evaluator needs a non-empty argv")
        self.argv = list(argv)
        self.spaces = dict(spaces)
        self.seed = seed
        self.timeout_s = timeout_s
        self.max_workers = max_workers or os.cpu_count() or 1
        self._slots = threading.BoundedSemaphore(self.max_workers)

    def preflight(self) -> None:
        """Fail fast when the command cannot be found at all."""
        if shutil.which(self.argv[0]) is None:
            raise ExternalCommandFailed(f"evaluator command not found: {self.argv[0]}")

    def request(self, model_id: str, technique_id: str, config: Configuration, repeat: int) -> dict:
        if technique_id not in self.spaces:
            raise UnknownTechnique(technique_id)
        return {
            "model_id": model_id,
            "technique_id": technique_id,
            "config": self.spaces[technique_id].as_dict(config),
            "repeat": repeat,
            "seed": self.seed,
        }

    def evaluate(self, model_id: str, technique_id: str, config: Configuration, repeat: int = 0) -> float:
        payload = json.dumps(self.request(model_id, technique_id, config, repeat)) + "\n"
        with self._slots:
            try:
                proc = subprocess.run(
                    self.argv,
                    input=payload,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout_s,
                )
            except FileNotFoundError as exc:
                raise ExternalCommandFailed(f"evaluator command not found: {exc.filename}") from None
            except subprocess.TimeoutExpired:
                raise ExternalCommandFailed(f"evaluator timed out after {self.timeout_s}s") from None
        if proc.returncode != 0:
            raise ExternalCommandFailed(
                f"evaluator exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        try:
            reply = json.loads(lines[-1])
        except (IndexError, json.JSONDecodeError):
            raise ExternalCommandFailed(f"malformed evaluator output: {proc.stdout[-500:]!r}") from None
        if not isinstance(reply, dict):
            raise ExternalCommandFailed(f"evaluator reply is not an object: {reply!r}")
        if "error" in reply:
            raise ExternalCommandFailed(f"evaluator reported error: {reply['error']}")
        perf = reply.get("performance")
        if isinstance(perf, bool) or not isinstance(perf, (int, float)) or not math.isfinite(perf):
            raise ExternalCommandFailed(f"evaluator reply lacks a finite performance: {reply!r}")
        return float(perf)


# --- brute-force oracle -------------------------------------------------------------


@dataclass(frozen=True)
class GridOracleResult:
    best_config: Configuration | None
    best: AggregateResult | None
    grid: np.ndarray  # (n_points, n_dims) raw dim values
    mean: np.ndarray
    rate: np.ndarray
    feasible: np.ndarray

    @property
    def feasible_found(self) -> bool:
        return self.best is not None


def _axis(dim, resolution: int) -> np.ndarray:
    k = dim.kind
    if isinstance(k, Categorical):
        raise InvalidSpec(f"grid oracle does not handle categorical dim {dim.name!r}")
    if isinstance(k, Integer):
        return np.unique(np.round(np.linspace(k.lo, k.hi, min(resolution, k.hi - k.lo + 1))))
    return np.linspace(k.lo, k.hi, resolution)


def grid_oracle(
    backend: SyntheticBackend,
    technique: Technique,
    fleet: Fleet,
    thresholds: Thresholds,
    resolution: int | Sequence[int] = 101,
) -> GridOracleResult:
    """Exhaustively score every grid point (noise-free) and return the
    feasible argmax, first in C order on ties. ``best`` is ``None`` when no
    grid point is feasible."""
    space = technique.space
    res = [resolution] * len(space) if isinstance(resolution, int) else list(resolution)
    axes = [_axis(d, r) for d, r in zip(space.dims, res)]
    total = math.prod(len(a) for a in axes)
    if total > MAX_GRID_POINTS:
        raise GridTooLarge(f"grid has {total} points (limit {MAX_GRID_POINTS})")
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    lo = np.array([d.kind.lo for d in space.dims], dtype=float)
    span = np.array([max(d.kind.hi - d.kind.lo, 0) for d in space.dims], dtype=float)
    encoded = np.divide(mesh - lo, span, out=np.zeros_like(mesh), where=span > 0)

    deltas = np.empty((total, len(fleet)))
    for j, m in enumerate(fleet):
        perf = m.baseline_performance + backend.delta(m.id, technique.id, encoded)
        deltas[:, j] = perf - m.baseline_performance
    mean, rate, feasible = aggregate_batch(deltas, fleet.normalized_weights, thresholds)

    best_config = best = None
    if feasible.any():
        idx = int(np.argmax(np.where(feasible, mean, -np.inf)))
        values = tuple(
            int(v) if isinstance(d.kind, Integer) else float(v) for d, v in zip(space.dims, mesh[idx])
        )
        best_config = Configuration(values)
        best = AggregateResult(
            weighted_mean=float(mean[idx]),
            regression_rate=float(rate[idx]),
            feasible=True,
            alpha=thresholds.alpha,
            epsilon=thresholds.epsilon,
        )
    return GridOracleResult(best_config, best, mesh, mean, rate, feasible)
