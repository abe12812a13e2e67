import math

import numpy as np
import pytest

from fleetopt.core import Configuration, Fleet, Thresholds
from fleetopt.errors import EvaluatorFailure
from fleetopt.mmo import (
    BELOW_TAU,
    INFEASIBLE_EVERYWHERE,
    MmoConfig,
    TrialRecord,
    derive_seed,
    evaluate_configuration,
    iteration_cost_summary,
    replay_record,
    run_mmo,
    validate_holdout,
)
from fleetopt.objective import GeneralizedTechnique

from helpers import FunctionEvaluator, fleet_of, model, technique, unit_space


def bowl(peak=0.01, center=(0.5, 0.5), curvature=0.05):
    def fn(mid, tid, cfg):
        x = np.asarray(cfg.values)
        return peak - curvature * float(np.sum((x - center) ** 2))

    return fn


def quick(n=12, seed=0, **kw):
    return MmoConfig(iterations_per_technique=n, seed=seed, surrogate_starts=4, **kw)


def test_evaluation_count_identity():
    reps = fleet_of(10)
    ev = FunctionEvaluator(reps, bowl())
    report = run_mmo([technique("a"), technique("b")], reps, ev, quick(5))
    assert report.evaluation_count == 100 == ev.calls
    assert len(report.trial_log) == 10


def test_repeats_multiply_evaluations():
    reps = fleet_of(3)
    ev = FunctionEvaluator(reps, bowl())
    report = run_mmo([technique()], reps, ev, quick(6, evaluation_repeats=3))
    assert report.evaluation_count == 54 == ev.calls
    assert all(o.variance < 1e-30 for r in report.trial_log for o in r.per_model.values())


def test_best_is_logged_and_maximal():
    reps = fleet_of(5)
    report = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(15))
    best = report.best["t"]
    assert best is not None
    logged = [r for r in report.trial_log if r.t == best.t][0]
    assert logged.config == best.config and logged.aggregate == best.aggregate
    assert all(best.aggregate.weighted_mean >= r.aggregate.weighted_mean for r in report.trial_log if r.feasible)
    assert [g.technique_id for g in report.generalized] == ["t"]


def test_sources_start_with_design():
    reps = fleet_of(4)
    report = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(12))
    sources = [r.source for r in report.trial_log]
    assert sources[:5] == ["design"] * 5
    assert "acquisition" in sources[5:]
    assert [r.t for r in report.trial_log] == list(range(1, 13))


def test_always_regressing_technique_is_rejected():
    reps = fleet_of(5)
    ev = FunctionEvaluator(reps, lambda m, t, c: -0.01)
    report = run_mmo([technique()], reps, ev, quick(6))
    assert report.generalized == []
    assert report.best["t"] is None
    assert report.rejected[0].technique_id == "t"
    assert report.rejected[0].reason == INFEASIBLE_EVERYWHERE


def test_small_gain_rejected_below_tau():
    reps = fleet_of(5)
    ev = FunctionEvaluator(reps, lambda m, t, c: 0.0001)
    report = run_mmo([technique()], reps, ev, quick(6))
    assert report.generalized == []
    assert report.rejected[0].reason == BELOW_TAU
    assert report.rejected[0].best_aggregate == pytest.approx(0.0001)


def test_evaluator_failure_marks_trial_invalid():
    reps = fleet_of(4)

    def fn(mid, tid, cfg):
        if mid == "m02" and cfg.values[0] > 0.5:
            raise EvaluatorFailure("crashed")
        return 0.01

    report = run_mmo([technique()], reps, FunctionEvaluator(reps, fn), quick(8))
    bad = [r for r in report.trial_log if r.config.values[0] > 0.5]
    good = [r for r in report.trial_log if r.config.values[0] <= 0.5]
    assert bad and good
    for r in bad:
        assert not r.valid and "m02" in r.error
        assert "EvaluatorFailure" in r.per_model["m02"].error
    assert all(r.valid for r in good)
    assert report.best["t"].config.values[0] <= 0.5


def test_non_finite_is_a_failure():
    reps = fleet_of(2)
    per_model, agg, err = evaluate_configuration(
        "t", Configuration((0.1, 0.1)), reps, FunctionEvaluator(reps, lambda *a: math.nan), Thresholds()
    )
    assert agg is None and err is not None
    assert all("NonFinite" in o.error for o in per_model.values())


def test_same_seed_same_log_and_different_seed_differs():
    reps = fleet_of(4)
    a = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(10, seed=3))
    b = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(10, seed=3))
    c = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(10, seed=4))
    assert a.trial_log == b.trial_log
    assert a.trial_log != c.trial_log


def test_workers_do_not_change_results():
    reps = fleet_of(6)
    a = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(8))
    b = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(8, workers=3))
    assert a.trial_log == b.trial_log


@pytest.mark.parametrize("cut", [0, 3, 7, 11])
def test_resume_matches_uninterrupted(cut):
    reps = fleet_of(4)
    techs = [technique("a"), technique("b")]
    full = run_mmo(techs, reps, FunctionEvaluator(reps, bowl()), quick(8))
    ev = FunctionEvaluator(reps, bowl())
    resumed = run_mmo(techs, reps, ev, quick(8), resume=full.trial_log[:cut])
    assert resumed.trial_log == full.trial_log
    assert ev.calls == (16 - cut) * 4


def test_resume_rejects_tampered_record():
    reps = fleet_of(3)
    full = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(6))
    r = full.trial_log[0]
    o = r.per_model["m00"]
    bad = TrialRecord(
        r.technique_id, r.t, r.config, {**r.per_model, "m00": type(o)(o.performance + 1, o.delta)},
        r.aggregate, r.seed, r.evaluations, r.source,
    )
    with pytest.raises(ValueError, match="delta mismatch"):
        replay_record(bad, reps, Thresholds())
    with pytest.raises(ValueError, match="contiguous"):
        run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(6), resume=full.trial_log[1:3])


def test_replay_all_records():
    reps = fleet_of(5)
    report = run_mmo([technique()], reps, FunctionEvaluator(reps, bowl()), quick(8))
    for r in report.trial_log:
        replay_record(r, reps, Thresholds())
        assert TrialRecord.from_json(r.to_json(unit_space("x", "y")), unit_space("x", "y")) == r


def test_config_validation():
    with pytest.raises(ValueError):
        MmoConfig(evaluation_repeats=0)
    with pytest.raises(ValueError):
        run_mmo([technique()], fleet_of(2), None, quick(3))
    with pytest.raises(ValueError):
        run_mmo([technique(), technique()], fleet_of(2), None, quick(5))
    with pytest.raises(ValueError):
        run_mmo([technique()], Fleet.from_models([]), None, quick(5))


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert len({derive_seed(s, j) for s in range(20) for j in range(20)}) == 400


# --- holdout ----------------------------------------------------------------------


def test_holdout_transfer_true():
    holdout = fleet_of(5)
    g = GeneralizedTechnique("t", Configuration((0.5, 0.5)), 0.01)
    [res] = validate_holdout([g], holdout, FunctionEvaluator(holdout, bowl()), Thresholds())
    assert res.transfer
    assert res.aggregate.weighted_mean == pytest.approx(0.01)


def test_holdout_transfer_false_on_anti_correlated_models():
    holdout = fleet_of(5)
    anti = FunctionEvaluator(holdout, lambda m, t, c: -bowl()(m, t, c))
    [res] = validate_holdout(
        [GeneralizedTechnique("t", Configuration((0.5, 0.5)), 0.01)], holdout, anti, Thresholds()
    )
    assert not res.transfer
    assert not res.aggregate.feasible


def test_holdout_empty_and_failures():
    holdout = fleet_of(3)
    assert validate_holdout([], holdout, None, Thresholds()) == []

    def fn(mid, tid, cfg):
        if mid == "m01":
            raise EvaluatorFailure("down")
        return 0.01

    [res] = validate_holdout(
        [GeneralizedTechnique("t", Configuration((0.5, 0.5)), 0.01)],
        holdout,
        FunctionEvaluator(holdout, fn),
        Thresholds(),
    )
    assert res.error is not None and res.per_model["m01"].error
    assert res.transfer


# --- cost ---------------------------------------------------------------------------


def test_cost_summary():
    reps = Fleet.from_models([model(f"r{i}") for i in range(3)])
    report = run_mmo(
        [technique("a"), technique("b")], reps, FunctionEvaluator(reps, bowl()), quick(5)
    )
    cost = iteration_cost_summary(report, fleet_size=200, technique_count=2)
    assert cost.template_evaluations == 30
    assert cost.model_instantiations == 200
    assert cost.fragmented_bound == 800


def test_cost_summary_no_techniques():
    report = run_mmo([], fleet_of(2), None, quick(5))
    cost = iteration_cost_summary(report, fleet_size=10, technique_count=0)
    assert (cost.template_evaluations, cost.model_instantiations, cost.fragmented_bound) == (0, 10, 10)
