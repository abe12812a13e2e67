import math

import pytest
from hypothesis import given, strategies as st

from fleetopt.core import (
    Categorical,
    Configuration,
    Continuous,
    Dim,
    Fleet,
    HyperparameterSpace,
    Integer,
    Technique,
    Thresholds,
    format_fraction,
    normalize_weights,
    validate_configuration,
)
from fleetopt.errors import AllZeroWeights, DegenerateFleet, NegativeWeight

from helpers import mixed_space, model


def test_normalize_weights_sums_to_one():
    assert normalize_weights([1, 1, 2]) == (0.25, 0.25, 0.5)


@pytest.mark.parametrize("raw, exc", [([0, 0], AllZeroWeights), ([], AllZeroWeights), ([1, -1], NegativeWeight)])
def test_normalize_weights_rejects(raw, exc):
    with pytest.raises(exc):
        normalize_weights(raw)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=50).filter(lambda w: sum(w) > 0))
def test_normalized_weights_property(raw):
    w = normalize_weights(raw)
    assert abs(math.fsum(w) - 1.0) <= 1e-12
    assert all(x >= 0 for x in w)


def test_fleet_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        Fleet.from_models([model("a"), model("a")])
    with pytest.raises(DegenerateFleet):
        Fleet.from_models([])


def test_fleet_subset_renormalizes():
    fleet = Fleet.from_models([model("a", weight=1), model("b", weight=3), model("c", weight=4)])
    sub = fleet.subset(["c", "a"])
    assert sub.ids == ("c", "a")
    assert sub.normalized_weights == (0.8, 0.2)


def test_fleet_json_round_trip():
    fleet = Fleet.from_models([model("a", weight=2), model("b", hardware="cpu")])
    assert Fleet.from_json(fleet.to_json()) == fleet


@pytest.mark.parametrize("field, value", [("ranking_stage", "late"), ("hardware", "tpu"), ("data_constraint", "x")])
def test_descriptor_rejects_unknown_enums(field, value):
    with pytest.raises(ValueError):
        model("a", **{field: value})


def test_descriptor_rejects_bad_flops_and_weight():
    with pytest.raises(ValueError):
        model("a", flops=0.0)
    with pytest.raises(NegativeWeight):
        model("a", weight=-1)


def test_validate_configuration_reports_each_violation():
    space = mixed_space()
    assert validate_configuration(space, Configuration((0.5, 2, "gelu"))).ok
    bad = validate_configuration(space, Configuration((1.5, 9, "tanh")))
    assert not bad
    assert len(bad.violations) == 3
    assert any("arity" in v for v in validate_configuration(space, Configuration((0.5,))).violations)


def test_integer_dim_rejects_float_and_bool():
    k = Integer(0, 3)
    assert k.contains(2)
    assert not k.contains(2.0)
    assert not k.contains(True)


def test_dim_constructors_validate():
    with pytest.raises(ValueError):
        Continuous(1.0, 1.0)
    with pytest.raises(ValueError):
        Categorical(("a", "a"))
    with pytest.raises(ValueError):
        HyperparameterSpace(())


def test_space_json_round_trip_and_int_restore():
    space = mixed_space()
    assert HyperparameterSpace.from_json(space.to_json()) == space
    cfg = space.from_dict({"lr": 0.1, "layers": 3.0, "act": "relu"})
    assert cfg.values == (0.1, 3, "relu")
    assert isinstance(cfg.values[1], int)


def test_technique_json_rejects_unknown_keys():
    t = Technique("t", mixed_space())
    assert Technique.from_json(t.to_json()) == t
    with pytest.raises(ValueError):
        Technique.from_json({**t.to_json(), "bogus": 1})


def test_dim_json_rejects_unknown_type():
    with pytest.raises(ValueError):
        Dim.from_json({"name": "x", "type": "ordinal", "lo": 0, "hi": 1})


def test_threshold_defaults_and_bounds():
    t = Thresholds()
    assert (t.alpha, t.epsilon, t.tau) == (0.0005, 0.1, 0.0005)
    with pytest.raises(ValueError):
        Thresholds(epsilon=1.5)
    with pytest.raises(ValueError):
        Thresholds(alpha=-0.1)


def test_format_fraction_shows_percent():
    assert format_fraction(0.0063) == "0.0063 (0.63%)"
    assert format_fraction(0.0005) == "0.0005 (0.05%)"
