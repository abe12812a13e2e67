import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fleetopt.core import Fleet
from fleetopt.errors import DegenerateFleet, InvalidK, NoNonRepresentatives, RangeTooNarrow
from fleetopt.fleet_eval import SyntheticFleetSpec, TechniqueResponseSpec, generate_synthetic_fleet
from fleetopt.representative import (
    RepresentativeSet,
    encode_model_space,
    kmeans,
    select_k_elbow,
    select_representatives,
    split_holdout,
)

from helpers import model, technique


def blob_fleet(clusters, per_cluster, seed, layout="equidistant"):
    t = technique()
    spec = SyntheticFleetSpec(
        clusters * per_cluster,
        {"t": TechniqueResponseSpec((0.5, 0.5))},
        seed=seed,
        attribute_clusters=clusters,
        attribute_layout=layout,
    )
    fleet, _ = generate_synthetic_fleet(spec, [t])
    return fleet


def test_encoding_one_hot_and_zscore():
    fleet = Fleet.from_models(
        [model("a", flops=1e6, hardware="cpu"), model("b", flops=1e8, hardware="gpu"), model("c", flops=1e7)]
    )
    pts = encode_model_space(fleet)
    coords = np.array([p.coordinates for p in pts])
    # one column per observed value of each attribute, plus log-flops
    assert coords.shape == (3, 1 + 2 + 1 + 1 + 1 + 1)
    np.testing.assert_allclose(coords[:, -1].mean(), 0, atol=1e-12)
    np.testing.assert_allclose(coords[:, -1].std(), 1)
    np.testing.assert_array_equal(coords[:, 1:3], [[1, 0], [0, 1], [0, 1]])


def test_encoding_constant_flops_gives_zero_column():
    pts = encode_model_space(Fleet.from_models([model("a"), model("b")]))
    assert all(p.coordinates[-1] == 0 for p in pts)


def test_encoding_needs_two_models():
    with pytest.raises(DegenerateFleet):
        encode_model_space(Fleet.from_models([model("a")]))


def test_kmeans_invalid_k():
    pts = np.zeros((3, 2))
    with pytest.raises(InvalidK):
        kmeans(pts, 4, seed=0)
    with pytest.raises(InvalidK):
        kmeans(pts, 0, seed=0)


def test_kmeans_k_equals_n_has_zero_sse():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(6, 2))
    assert kmeans(pts, 6, seed=1).sse == pytest.approx(0, abs=1e-24)


def test_kmeans_history_nonincreasing():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(60, 3))
    res = kmeans(pts, 5, seed=2, restarts=1)
    hist = np.array(res.history)
    assert (np.diff(hist) <= 1e-12).all()


def test_elbow_on_clean_blobs():
    # simplex vertices: every pair of blobs equally far apart
    rng = np.random.default_rng(3)
    centers = 10.0 * np.eye(4)
    pts = np.vstack([c + rng.normal(scale=0.1, size=(10, 4)) for c in centers])
    k, curve = select_k_elbow(pts, 2, 8, seed=0)
    assert k == 4
    sse = [s for _, s in curve]
    assert all(a >= b for a, b in zip(sse, sse[1:]))


def test_elbow_range_checks():
    pts = np.zeros((5, 1))
    with pytest.raises(RangeTooNarrow):
        select_k_elbow(pts, 3, 3, seed=0)
    with pytest.raises(RangeTooNarrow):
        select_k_elbow(pts, 2, 5, seed=0)


def test_select_representatives_needs_four_models():
    with pytest.raises(DegenerateFleet):
        select_representatives(Fleet.from_models([model(f"m{i}") for i in range(3)]), (2, 5), seed=0)


def test_representatives_one_per_blob():
    fleet = blob_fleet(6, 4, seed=5)
    reps = select_representatives(fleet, (2, 12), seed=0)
    assert reps.k == 6
    assert sorted(int(r[1:]) % 6 for r in reps.chosen_ids) == list(range(6))


def test_k_max_is_clipped_to_n_minus_one():
    fleet = blob_fleet(2, 3, seed=0)
    reps = select_representatives(fleet, (2, 30), seed=0)
    assert max(k for k, _ in reps.inertia_curve) <= len(fleet)


@settings(max_examples=10)
@given(st.randoms(use_true_random=False))
def test_representatives_independent_of_input_order(rnd):
    fleet = blob_fleet(4, 3, seed=8)
    models = list(fleet.models)
    rnd.shuffle(models)
    a = select_representatives(fleet, (2, 8), seed=1)
    b = select_representatives(Fleet.from_models(models), (2, 8), seed=1)
    assert a == b


def test_representative_set_json_round_trip():
    reps = select_representatives(blob_fleet(3, 3, seed=2), (2, 6), seed=0)
    assert RepresentativeSet.from_json(reps.to_json()) == reps


def test_holdout_size_and_disjointness():
    fleet = blob_fleet(5, 7, seed=0)
    reps = select_representatives(fleet, (2, 10), seed=0)
    hold = split_holdout(fleet, reps, 0.2, seed=0)
    rest = len(fleet) - len(reps.chosen_ids)
    assert len(hold.holdout_ids) == -(-rest // 5)
    assert not set(hold.holdout_ids) & set(reps.chosen_ids)
    assert hold == split_holdout(fleet, reps, 0.2, seed=0)


def test_holdout_rounding_is_not_inflated_by_float_error():
    fleet = Fleet.from_models([model(f"m{i:02d}") for i in range(31)])
    reps = RepresentativeSet(("m00",), 1, {}, ())
    # 0.1 * 30 is 3.0000000000000004 in floating point
    assert len(split_holdout(fleet, reps, 0.1, seed=0).holdout_ids) == 3


def test_holdout_needs_non_representatives():
    fleet = Fleet.from_models([model("a"), model("b")])
    with pytest.raises(NoNonRepresentatives):
        split_holdout(fleet, RepresentativeSet(("a", "b"), 2, {}, ()), 0.5, seed=0)
