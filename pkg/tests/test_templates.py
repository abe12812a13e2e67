import json

import numpy as np
import pytest

from fleetopt.core import Configuration, Fleet, Thresholds
from fleetopt.errors import (
    DimCoverageGap,
    DuplicateTechnique,
    EvaluatorFailure,
    OverrideOnStandardizedDim,
    OverrideOutOfBounds,
    RegistryCorrupt,
    StaleParent,
)
from fleetopt.fleet_eval import SyntheticFleetSpec, TechniqueResponseSpec, generate_synthetic_fleet
from fleetopt.objective import GeneralizedTechnique
from fleetopt.sensitivity import EXPOSE, STANDARDIZE, SensitivityReport
from fleetopt.templates import (
    EXPOSE_NOTHING,
    TemplateRegistry,
    TemplateVersion,
    backtest,
    commit_version,
    diff_versions,
    instantiate_model,
)

from helpers import FunctionEvaluator, fleet_of, mixed_space, model, technique, unit_space

T0 = "2026-01-01T00:00:00+00:00"
SPACES = {"a": unit_space("x", "y"), "b": unit_space("x", "y", "z"), "m": mixed_space()}


def decisions(tid, **d):
    return SensitivityReport(tid, (), d, 0.0, 0.0, 0)


def gen(tid, *values, perf=0.01):
    return GeneralizedTechnique(tid, Configuration(tuple(values)), perf)


def commit(parent, gens, sens, **kw):
    return commit_version(parent, gens, sens, SPACES, created_at=T0, **kw)


def test_base_case_all_standardized():
    v = commit(None, [gen("a", 0.2, 0.8)], {"a": EXPOSE_NOTHING})
    assert (v.version_id, v.parent) == (1, None)
    [c] = v.committed
    assert c.fixed_config == {"x": 0.2, "y": 0.8} and c.exposed == {}
    assert c.to_json()["exposed_params"] == []


def test_three_dims_expose_middle():
    v = commit(None, [gen("b", 0.1, 0.5, 0.9)], {"b": decisions("b", x=STANDARDIZE, y=EXPOSE, z=STANDARDIZE)})
    [c] = v.committed
    assert set(c.fixed_config) == {"x", "z"}
    assert set(c.exposed) == {"y"}
    assert c.exposed["y"] == 0.5
    assert set(c.fixed_config) | set(c.exposed) == set(SPACES["b"].names)
    assert c.to_json()["exposed_params"] == [{"dim": "y", "default": 0.5, "bounds": {"lo": 0.0, "hi": 1.0}}]


def test_child_supersedes_and_carries_forward():
    v1 = commit(None, [gen("a", 0.2, 0.8), gen("b", 0.1, 0.1, 0.1)], {"a": EXPOSE_NOTHING, "b": EXPOSE_NOTHING})
    v2 = commit(v1, [gen("a", 0.3, 0.3)], {"a": EXPOSE_NOTHING})
    assert (v2.version_id, v2.parent) == (2, 1)
    assert v2.technique_ids == ("a", "b")
    assert v2.technique("a").fixed_config == {"x": 0.3, "y": 0.3}
    assert v2.technique("b") == v1.technique("b")


def test_commit_errors():
    with pytest.raises(DuplicateTechnique):
        commit(None, [gen("a", 0.2, 0.8), gen("a", 0.1, 0.1)], {"a": EXPOSE_NOTHING})
    with pytest.raises(DimCoverageGap):
        commit(None, [gen("b", 0.1, 0.5, 0.9)], {"b": decisions("b", x=STANDARDIZE, y=EXPOSE)})
    with pytest.raises(DimCoverageGap):
        commit(None, [gen("a", 0.2, 0.8)], {})


# --- instantiate ---------------------------------------------------------------------


@pytest.fixture
def version():
    return commit(
        None,
        [gen("b", 0.1, 0.5, 0.9), gen("m", 0.4, 2, "gelu")],
        {"b": decisions("b", x=STANDARDIZE, y=EXPOSE, z=STANDARDIZE), "m": decisions("m", lr=STANDARDIZE, layers=EXPOSE, act=EXPOSE)},
    )


def test_defaults_resolve_to_optimum(version):
    inst = instantiate_model(version, model("m0"), model_inputs={"pipeline": "p1"})
    assert inst.resolved_configs == {"b": Configuration((0.1, 0.5, 0.9)), "m": Configuration((0.4, 2, "gelu"))}
    assert inst.model_inputs == {"pipeline": "p1"}
    assert instantiate_model(version, model("m0")) == instantiate_model(version, model("m0"))


def test_override_changes_exactly_one_dim(version):
    inst = instantiate_model(version, model("m0"), {"m": {"act": "silu"}, "b": {"y": 0.7}})
    assert inst.resolved_configs["m"] == Configuration((0.4, 2, "silu"))
    assert inst.resolved_configs["b"] == Configuration((0.1, 0.7, 0.9))


def test_override_guards(version):
    with pytest.raises(OverrideOnStandardizedDim):
        instantiate_model(version, model("m0"), {"b": {"x": 0.3}})
    with pytest.raises(OverrideOutOfBounds):
        instantiate_model(version, model("m0"), {"b": {"y": 1.3}})
    with pytest.raises(OverrideOutOfBounds):
        instantiate_model(version, model("m0"), {"m": {"layers": 9}})
    with pytest.raises(OverrideOutOfBounds):
        instantiate_model(version, model("m0"), {"m": {"act": "tanh"}})
    with pytest.raises(KeyError):
        instantiate_model(version, model("m0"), {"zz": {}})


# --- backtest ----------------------------------------------------------------------


def synthetic(negate=False):
    t = technique("a")
    fleet, backend = generate_synthetic_fleet(
        SyntheticFleetSpec(10, {"a": TechniqueResponseSpec((0.4, 0.6))}, seed=2), [t]
    )
    if not negate:
        return fleet, backend
    return fleet, FunctionEvaluator(fleet, lambda m, tid, c: -backend.delta(m, tid, np.asarray(c.values)))


def test_backtest_passes_at_shared_optimum():
    fleet, backend = synthetic()
    v = commit(None, [gen("a", 0.4, 0.6)], {"a": EXPOSE_NOTHING})
    res = backtest(v, fleet, backend, Thresholds())
    assert res.passed and res.errors == {}
    for m in fleet:
        assert res.per_model[m.id] == pytest.approx(backend.response(m.id, "a").peak, abs=1e-15)


def test_backtest_fails_on_negated_fleet():
    fleet, ev = synthetic(negate=True)
    v = commit(None, [gen("a", 0.4, 0.6)], {"a": EXPOSE_NOTHING})
    assert not backtest(v, fleet, ev, Thresholds()).passed


def test_backtest_empty_version():
    fleet = fleet_of(4)
    empty = TemplateVersion(1, None, (), created_at=T0)
    res = backtest(empty, fleet, None, Thresholds())
    assert all(d == 0.0 for d in res.per_model.values())
    assert res.aggregate.weighted_mean == 0.0
    assert not res.passed
    assert backtest(empty, fleet, None, Thresholds(tau=0.0)).passed


def test_backtest_records_failures():
    fleet = fleet_of(3)

    def fn(mid, tid, cfg):
        if mid == "m01":
            raise EvaluatorFailure("offline")
        return 0.01

    v = commit(None, [gen("a", 0.4, 0.6)], {"a": EXPOSE_NOTHING})
    res = backtest(v, fleet, FunctionEvaluator(fleet, fn), Thresholds())
    assert res.per_model["m01"] is None and "offline" in res.errors["m01"]
    assert res.passed


# --- diff -------------------------------------------------------------------------


def test_diff_cases():
    v1 = commit(None, [gen("b", 0.1, 0.5, 0.9)], {"b": EXPOSE_NOTHING})
    assert diff_versions(v1, v1).empty
    v2 = commit(v1, [gen("a", 0.2, 0.2)], {"a": EXPOSE_NOTHING})
    d = diff_versions(v1, v2)
    assert d.added == ("a",) and d.removed == () and d.superseded == ()
    v3 = commit(v2, [gen("b", 0.2, 0.5, 0.9)], {"b": decisions("b", x=STANDARDIZE, y=EXPOSE, z=STANDARDIZE)})
    d = diff_versions(v2, v3)
    assert d.superseded == ("b",)
    assert d.changed_fixed == (("b", "x", 0.1, 0.2),)
    assert d.exposure_changes == (("b", "y", "fixed->exposed"),)
    assert diff_versions(v3, v1).removed == ("a",)


# --- registry ---------------------------------------------------------------------


def test_registry_round_trip_and_replay_hash(tmp_path):
    path = tmp_path / "templates.jsonl"
    reg = TemplateRegistry(path)
    assert reg.latest() is None
    v1 = commit(None, [gen("a", 0.2, 0.8)], {"a": EXPOSE_NOTHING})
    reg.commit(v1)
    v2 = commit(v1, [gen("m", 0.4, 2, "gelu")], {"m": decisions("m", lr=STANDARDIZE, layers=EXPOSE, act=EXPOSE)})
    reg.commit(v2)
    again = TemplateRegistry(path)
    assert again.versions == (v1, v2)
    assert again.replay_hash() == reg.replay_hash()
    assert again.get(2) == v2
    for line in path.read_text().splitlines():
        assert json.dumps(json.loads(line), sort_keys=True, separators=(",", ":")) == line
    with pytest.raises(KeyError):
        again.get(3)


def test_registry_rejects_stale_parent(tmp_path):
    reg = TemplateRegistry(tmp_path / "r.jsonl")
    v1 = commit(None, [gen("a", 0.2, 0.8)], {"a": EXPOSE_NOTHING})
    reg.commit(v1)
    with pytest.raises(StaleParent):
        reg.commit(commit(None, [gen("a", 0.3, 0.8)], {"a": EXPOSE_NOTHING}))
    reg.commit(commit(v1, [gen("a", 0.3, 0.8)], {"a": EXPOSE_NOTHING}))
    with pytest.raises(StaleParent):
        reg.commit(commit(v1, [gen("a", 0.4, 0.8)], {"a": EXPOSE_NOTHING}))


def test_registry_detects_corruption(tmp_path):
    path = tmp_path / "r.jsonl"
    reg = TemplateRegistry(path)
    reg.commit(commit(None, [gen("b", 0.1, 0.5, 0.9)], {"b": EXPOSE_NOTHING}))
    obj = json.loads(path.read_text())
    obj["committed"][0]["fixed_config"].pop("y")
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(RegistryCorrupt):
        TemplateRegistry(path)
    obj["committed"][0]["fixed_config"]["y"] = 0.5
    obj["version_id"] = 2
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(RegistryCorrupt):
        TemplateRegistry(path)
    path.write_text("{not json\n")
    with pytest.raises(RegistryCorrupt):
        TemplateRegistry(path)
