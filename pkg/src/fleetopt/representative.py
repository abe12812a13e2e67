"""Representative-model selection: attribute encoding, k-means, elbow rule.

Models are embedded by one-hot encoding their five categorical attributes
(over the values observed in the fleet, sorted) and appending z-scored
``log10(flops)``. The number of clusters is chosen where the discrete second
difference of the SSE curve peaks, and each cluster contributes the member
nearest its centroid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import Fleet
from .errors import DegenerateFleet, InvalidK, NoNonRepresentatives, RangeTooNarrow

log = logging.getLogger(__name__)

CATEGORICAL_ATTRIBUTES = (
    "ranking_stage",
    "hardware",
    "optimization_event",
    "product_surface",
    "data_constraint",
)
MAX_LLOYD_ITERATIONS = 300


@dataclass(frozen=True)
class EncodedModelPoint:
    model_id: str
    coordinates: np.ndarray


def encode_model_space(fleet: Fleet) -> list[EncodedModelPoint]:
    if len(fleet) < 2:
        raise DegenerateFleet("need at least two models to encode a model space")
    columns = []
    for attr in CATEGORICAL_ATTRIBUTES:
        observed = [getattr(m, attr) for m in fleet]
        for value in sorted(set(observed)):
            columns.append([1.0 if v == value else 0.0 for v in observed])
    log_flops = np.log10([m.flops for m in fleet])
    std = log_flops.std()
    z = (log_flops - log_flops.mean()) / std if std > 0 else np.zeros_like(log_flops)
    columns.append(z)
    coords = np.column_stack(columns)
    return [EncodedModelPoint(m.id, coords[i]) for i, m in enumerate(fleet)]


# --- k-means --------------------------------------------------------------------


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    history: tuple[float, ...] = field(default=(), repr=False)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    idx = [int(rng.integers(n))]
    d2 = kernels.sq_dists(points, points[idx]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, kernels.sq_dists(points, points[[nxt]])[:, 0])
    return points[idx].copy()


def _fill_empty(points, labels, centroids, k):
    """Give each empty cluster the farthest point of a multi-member cluster."""
    labels = labels.copy()
    centroids = centroids.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        donors = counts[labels] > 1
        d2 = ((points - centroids[labels]) ** 2).sum(axis=1)
        i = int(np.argmax(np.where(donors, d2, -1.0)))
        src = labels[i]
        labels[i] = c
        centroids[c] = points[i]
        centroids[src] = points[labels == src].mean(axis=0)
    return labels, centroids


def lloyd(points: np.ndarray, centroids: np.ndarray) -> KMeansResult:
    """Lloyd iterations from the given centroids until the assignment is a
    fixed point (or the iteration cap)."""
    k = len(centroids)
    centroids = np.array(centroids, dtype=float)
    labels, d2 = kernels.assign_nearest(points, centroids)
    history = [float(d2.sum())]
    for _ in range(MAX_LLOYD_ITERATIONS):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
        new_labels, d2 = kernels.assign_nearest(points, centroids)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    if len(np.unique(labels)) < k:
        labels, centroids = _fill_empty(points, labels, centroids, k)
        history.append(float(((points - centroids[labels]) ** 2).sum()))
    return KMeansResult(labels, centroids, history[-1], tuple(history))


def kmeans(
    points,
    k: int,
    seed: int,
    restarts: int = 10,
    init: np.ndarray | None = None,
) -> KMeansResult:
    """Best-SSE k-means over ``restarts`` k-means++ initializations.

    ``init`` adds one extra, explicitly given starting centroid set; it is
    tried after the random restarts and wins only on strictly lower SSE.
    """
    points = np.asarray(points, dtype=float)
    if not 1 <= k <= len(points):
        raise InvalidK(f"k={k} outside [1, {len(points)}]")
    if restarts < 1:
        raise InvalidK("restarts must be >= 1")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        res = lloyd(points, _kmeanspp_init(points, k, np.random.default_rng(child)))
        if best is None or res.sse < best.sse:
            best = res
    if init is not None:
        res = lloyd(points, init)
        if res.sse < best.sse:
            best = res
    return best


def _sse_curve(points: np.ndarray, k_lo: int, k_hi: int, seed: int, restarts: int):
    """Fits for k in [k_lo, k_hi]; each k is also warm-started from the
    (k-1) solution plus its farthest point, which keeps SSE nonincreasing."""
    fits = {}
    prev = None
    for k in range(k_lo, k_hi + 1):
        init = None
        if prev is not None:
            d2 = ((points - prev.centroids[prev.labels]) ** 2).sum(axis=1)
            init = np.vstack([prev.centroids, points[int(np.argmax(d2))]])
        prev = fits[k] = kmeans(points, k, seed, restarts, init=init)
    return fits


def _elbow(points: np.ndarray, k_min: int, k_max: int, seed: int, restarts: int):
    n = len(points)
    if not (2 <= k_min < k_max <= n - 1):
        raise RangeTooNarrow(f"need 2 <= k_min < k_max <= n-1 (n={n}), got [{k_min}, {k_max}]")
    fits = _sse_curve(points, k_min - 1, k_max + 1, seed, restarts)
    sse = {k: f.sse for k, f in fits.items()}
    best_k, best_val = k_min, -math.inf
    for k in range(k_min, k_max + 1):
        val = sse[k - 1] - 2.0 * sse[k] + sse[k + 1]
        if val > best_val:
            best_k, best_val = k, val
    return best_k, [(k, sse[k]) for k in sorted(sse)], fits


def select_k_elbow(points, k_min: int, k_max: int, seed: int, restarts: int = 10):
    """Pick k in ``[k_min, k_max]`` maximizing ``SSE(k-1) - 2 SSE(k) + SSE(k+1)``.

    Returns ``(k, inertia_curve)`` where the curve spans ``k_min-1..k_max+1``.
    """
    k, curve, _ = _elbow(np.asarray(points, dtype=float), k_min, k_max, seed, restarts)
    return k, curve


# --- representatives ------------------------------------------------------------


@dataclass(frozen=True)
class RepresentativeSet:
    chosen_ids: tuple[str, ...]
    k: int
    cluster_assignment: dict[str, int]
    inertia_curve: tuple[tuple[int, float], ...]

    def to_json(self) -> dict:
        return {
            "chosen_ids": list(self.chosen_ids),
            "k": self.k,
            "cluster_assignment": dict(sorted(self.cluster_assignment.items())),
            "inertia_curve": [[k, sse] for k, sse in self.inertia_curve],
        }

    @classmethod
    def from_json(cls, obj) -> "RepresentativeSet":
        return cls(
            chosen_ids=tuple(obj["chosen_ids"]),
            k=int(obj["k"]),
            cluster_assignment={k: int(v) for k, v in obj["cluster_assignment"].items()},
            inertia_curve=tuple((int(k), float(s)) for k, s in obj["inertia_curve"]),
        )


def select_representatives(
    fleet: Fleet, k_range: tuple[int, int], seed: int, restarts: int = 10
) -> RepresentativeSet:
    """Cluster the fleet and keep the member nearest each centroid.

    Models are processed in id order, so the result does not depend on the
    input ordering. ``k_max`` is clipped to ``len(fleet) - 1``.
    """
    if len(fleet) < 4:
        raise DegenerateFleet("representative selection needs at least 4 models")
    ordered = sorted(fleet.models, key=lambda m: m.id)
    encoded = encode_model_space(Fleet.from_models(ordered))
    ids = [p.model_id for p in encoded]
    points = np.array([p.coordinates for p in encoded])
    k_min, k_max = k_range
    if k_max > len(points) - 1:
        log.info("clipping k_max from %d to %d", k_max, len(points) - 1)
        k_max = len(points) - 1
    k, curve, fits = _elbow(points, k_min, k_max, seed, restarts)
    fit = fits[k]
    d2 = ((points - fit.centroids[fit.labels]) ** 2).sum(axis=1)
    chosen = []
    for c in range(k):
        members = [i for i in range(len(ids)) if fit.labels[i] == c]
        chosen.append(min(members, key=lambda i: (d2[i], ids[i])))
    return RepresentativeSet(
        chosen_ids=tuple(ids[i] for i in chosen),
        k=k,
        cluster_assignment={ids[i]: int(fit.labels[i]) for i in range(len(ids))},
        inertia_curve=tuple(curve),
    )


@dataclass(frozen=True)
class HoldoutSet:
    holdout_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {"holdout_ids": list(self.holdout_ids)}


def split_holdout(fleet: Fleet, reps: RepresentativeSet, fraction: float, seed: int) -> HoldoutSet:
    """Seeded uniform sample of ``ceil(fraction * |fleet minus reps|)`` models."""
    if not 0 < fraction <= 1:
        raise ValueError("holdout fraction must lie in (0, 1]")
    chosen = set(reps.chosen_ids)
    complement = sorted(m.id for m in fleet if m.id not in chosen)
    if not complement:
        raise NoNonRepresentatives("representatives cover the whole fleet")
    # round first so 0.1 * 30 counts as 3, not 4
    size = min(len(complement), math.ceil(round(fraction * len(complement), 9)))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(complement), size=size, replace=False)
    return HoldoutSet(tuple(complement[i] for i in sorted(picked)))
