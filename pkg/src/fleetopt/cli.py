"""``fleetopt`` command-line interface.

Artifacts land in the configured output directory::

    reps.json         representative and holdout model ids, inertia curve
    trials.jsonl      one line per optimization trial
    report.json       admissions, rejections, holdout, back-test, cost, status
    sensitivity.json  per-technique coefficients and fix/expose decisions
    templates.jsonl   template version chain

Exit status: 0 on success, 2 when every technique is infeasible everywhere,
1 on any hard error (``report.json`` then carries ``"status": "failed"``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import CommandBackendModel, RunConfig, SyntheticBackendModel, load_config
from .core import Fleet, Technique, format_fraction
from .errors import ConfigValidationError, FleetOptError, MissingArtifact
from .fleet_eval import CommandEvaluator, generate_synthetic_fleet
from .jsonio import TrialLogWriter, read_json, read_trial_log, write_json, write_trial_log
from .mmo import (
    INFEASIBLE_EVERYWHERE,
    MmoReport,
    iteration_cost_summary,
    run_mmo,
    validate_holdout,
)
from .objective import GeneralizedTechnique
from .representative import HoldoutSet, RepresentativeSet, select_representatives, split_holdout
from .sensitivity import ExposurePolicy, SensitivityReport, analyze_sensitivity
from .templates import (
    EXPOSE_NOTHING,
    TemplateRegistry,
    TemplateVersion,
    backtest,
    commit_version,
    diff_versions,
    instantiate_model,
)

log = logging.getLogger("fleetopt")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ALL_INFEASIBLE = 2

INFEASIBLE_TEXT = "infeasible (regression rate above ε)"


# --- run context ------------------------------------------------------------------


@dataclass
class Context:
    config: RunConfig
    fleet: Fleet
    evaluator: object | None
    techniques: list[Technique]

    @property
    def spaces(self):
        return {t.id: t.space for t in self.techniques}

    @property
    def out_dir(self) -> Path:
        return self.config.out_dir

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def require_evaluator(self):
        if self.evaluator is None:
            raise ConfigValidationError("backend", "an evaluation backend is required for this command")
        return self.evaluator


def build_context(config: RunConfig) -> Context:
    backend = config.backend
    if isinstance(backend, SyntheticBackendModel):
        fleet, evaluator = generate_synthetic_fleet(config.synthetic_spec, config.techniques)
    else:
        fleet = config.fleet
        evaluator = None
        if isinstance(backend, CommandBackendModel):
            evaluator = CommandEvaluator(
                backend.argv,
                {t.id: t.space for t in config.techniques},
                seed=config.seed,
                timeout_s=backend.timeout_s,
                max_workers=backend.max_workers,
            )
            evaluator.preflight()
    return Context(config, fleet, evaluator, list(config.techniques))


# --- pipeline steps ---------------------------------------------------------------


def step_select_reps(ctx: Context) -> tuple[RepresentativeSet, HoldoutSet]:
    cfg = ctx.config
    reps = select_representatives(ctx.fleet, cfg.k_range, cfg.seed, cfg.restarts)
    holdout = split_holdout(ctx.fleet, reps, cfg.holdout_fraction, cfg.seed)
    write_json(
        ctx.path("reps.json"),
        {"representatives": reps.to_json(), "holdout": holdout.to_json(), "fleet_size": len(ctx.fleet)},
    )
    log.info("selected k=%d representatives, %d holdout models", reps.k, len(holdout.holdout_ids))
    return reps, holdout


def load_reps(ctx: Context) -> tuple[RepresentativeSet, HoldoutSet]:
    path = ctx.path("reps.json")
    if not path.exists():
        return step_select_reps(ctx)
    obj = read_json(path)
    return RepresentativeSet.from_json(obj["representatives"]), HoldoutSet(tuple(obj["holdout"]["holdout_ids"]))


def step_mmo(ctx: Context, reps: RepresentativeSet, log_path: Path, resume: bool = False) -> MmoReport:
    rep_fleet = ctx.fleet.subset(reps.chosen_ids)
    prior = []
    if resume and log_path.exists():
        prior = read_trial_log(log_path, ctx.spaces)
        # drop any torn tail line before appending
        write_trial_log(log_path, prior, ctx.spaces)
        log.info("resuming from %d logged trials", len(prior))
    with TrialLogWriter(log_path, ctx.spaces, append=bool(prior)) as writer:
        return run_mmo(ctx.techniques, rep_fleet, ctx.require_evaluator(), ctx.config.mmo, prior, writer)


def step_sensitivity(
    ctx: Context, records, technique_ids: Sequence[str], policy: ExposurePolicy
) -> dict[str, SensitivityReport | str]:
    """Reports per technique; a technique whose fit fails maps to the error text."""
    out = {}
    for tid in technique_ids:
        try:
            out[tid] = analyze_sensitivity(tid, records, ctx.spaces[tid], policy)
        except FleetOptError as exc:
            log.warning("sensitivity for %s unavailable: %s", tid, exc)
            out[tid] = f"{type(exc).__name__}: {exc}"
    return out


def sensitivity_json(results) -> dict:
    return {tid: (r.to_json() if isinstance(r, SensitivityReport) else {"error": r}) for tid, r in results.items()}


def step_commit(ctx: Context, generalized, sensitivity, provenance):
    """Commit admitted techniques as the next template version (None if nothing admitted).

    A technique without a usable sensitivity fit is committed fully standardized.
    """
    if not generalized:
        return None, None
    registry = TemplateRegistry(ctx.path("templates.jsonl"))
    reports = {
        tid: r if isinstance(r, SensitivityReport) else EXPOSE_NOTHING for tid, r in sensitivity.items()
    }
    parent = registry.latest()
    version = commit_version(parent, generalized, reports, ctx.spaces, provenance)
    registry.commit(version)
    return version, parent


def generalized_from_json(obj, spaces) -> list[GeneralizedTechnique]:
    return [
        GeneralizedTechnique(g["technique_id"], spaces[g["technique_id"]].from_dict(g["optimal_config"]),
                             float(g["optimal_performance"]))
        for g in obj["generalized"]
    ]


def exit_status(report: MmoReport) -> int:
    if report.rejected and all(r.reason == INFEASIBLE_EVERYWHERE for r in report.rejected) and not report.generalized:
        return EXIT_ALL_INFEASIBLE
    return EXIT_OK


def run_pipeline(config: RunConfig, resume: bool = False) -> int:
    """select-reps -> mmo -> sensitivity -> template commit -> holdout -> back-test."""
    out = {"status": "running"}
    report_path = config.out_dir / "report.json"
    try:
        ctx = build_context(config)
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        reps, holdout = step_select_reps(ctx)
        out["representatives"] = list(reps.chosen_ids)
        out["holdout_ids"] = list(holdout.holdout_ids)

        report = step_mmo(ctx, reps, ctx.path("trials.jsonl"), resume)
        out["mmo"] = report.to_json()
        out["cost"] = iteration_cost_summary(report, len(ctx.fleet), len(ctx.techniques)).to_json()

        admitted = [g.technique_id for g in report.generalized]
        sens = step_sensitivity(ctx, report.trial_log, admitted, config.policy)
        write_json(ctx.path("sensitivity.json"), sensitivity_json(sens))

        provenance = {"report": "report.json", "sensitivity": "sensitivity.json", "seed": config.seed}
        version, parent = step_commit(ctx, report.generalized, sens, provenance)
        out["template_version"] = None if version is None else version.version_id
        if version is not None:
            base = parent if parent is not None else TemplateVersion(0, None, ())
            out["template_diff"] = diff_versions(base, version).to_json()

        holdout_fleet = ctx.fleet.subset(holdout.holdout_ids)
        results = validate_holdout(
            report.generalized, holdout_fleet, ctx.evaluator, config.thresholds, config.mmo.evaluation_repeats
        )
        out["holdout"] = [r.to_json(ctx.spaces[r.technique_id]) for r in results]

        if version is not None:
            out["backtest"] = backtest(version, ctx.fleet, ctx.evaluator, config.thresholds).to_json()
        status = exit_status(report)
        out["status"] = "ok" if status == EXIT_OK else "no-feasible-technique"
        write_json(report_path, out)
        return status
    except (FleetOptError, OSError, ValueError, KeyError) as exc:
        log.error("pipeline failed: %s", exc)
        out["status"] = "failed"
        out["error"] = f"{type(exc).__name__}: {exc}"
        write_json(report_path, out)
        return EXIT_FAILED


# --- rendering --------------------------------------------------------------------


def _fmt_aggregate(agg) -> str:
    if agg is None:
        return "no valid evaluation"
    if not agg.get("feasible"):
        return f"{INFEASIBLE_TEXT}, R={format_fraction(agg['regression_rate'])}"
    return f"{format_fraction(agg['aggregate'])}, R={format_fraction(agg['regression_rate'])}"


def render_report(out_dir) -> str:
    """Human-readable summary of the artifacts in ``out_dir``."""
    out_dir = Path(out_dir)
    path = out_dir / "report.json"
    if not path.exists():
        raise MissingArtifact(f"missing {path}")
    rep = read_json(path)
    lines = [f"status: {rep.get('status')}"]
    if rep.get("error"):
        lines.append(f"error: {rep['error']}")
    mmo = rep.get("mmo")
    if mmo is not None:
        gen = mmo["generalized"]
        lines.append(f"admitted techniques: {len(gen)}")
        for g in gen:
            best = mmo["best"][g["technique_id"]]
            cfg = ", ".join(f"{k}={v}" for k, v in sorted(g["optimal_config"].items()))
            lines.append(
                f"  {g['technique_id']}: P*={format_fraction(g['optimal_performance'])}"
                f" R={format_fraction(best['aggregate']['regression_rate'])} at t={best['t']} [{cfg}]"
            )
        if mmo["rejected"]:
            lines.append(f"rejected techniques: {len(mmo['rejected'])}")
            for r in mmo["rejected"]:
                if r["reason"] == INFEASIBLE_EVERYWHERE:
                    detail = f"every trial {INFEASIBLE_TEXT}"
                else:
                    detail = f"best feasible {format_fraction(r['best_aggregate'])} below tau"
                lines.append(f"  {r['technique_id']}: {r['reason']} ({detail})")
    for h in rep.get("holdout", []):
        flag = "transfers" if h["transfer"] else "does not transfer"
        lines.append(f"holdout {h['technique_id']}: {_fmt_aggregate(h['aggregate'])} -> {flag}")
    if rep.get("backtest"):
        bt = rep["backtest"]
        lines.append(
            f"back-test v{bt['version_id']}: {_fmt_aggregate(bt['aggregate'])} -> {'pass' if bt['passed'] else 'fail'}"
        )
    if rep.get("cost"):
        c = rep["cost"]
        lines.append(
            f"evaluations: {c['template_evaluations']} template evaluations, {c['model_instantiations']} instantiations"
            f" (fragmented bound {c['fragmented_bound']})"
        )
    diff = rep.get("template_diff")
    if diff is not None:
        lines.append(f"template v{rep['template_version']} vs parent:")
        for key in ("added", "removed", "superseded"):
            if diff[key]:
                lines.append(f"  {key}: {', '.join(diff[key])}")
        for tid, dim, change in diff["exposure_changes"]:
            lines.append(f"  {tid}.{dim}: {change}")
    return "\n".join(lines) + "\n"


# --- argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors exit 1 so that 2 keeps its single meaning
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAILED, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--config", default=default, help="run configuration (JSON)")
        parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
        parser.add_argument("--out-dir", default=default, help="override the configured output directory")
        parser.add_argument(
            "--quiet", action="store_true", default=default or False, help="suppress the printed summary"
        )

    # subcommands accept the global flags too; SUPPRESS keeps them from
    # clobbering values given before the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, argparse.SUPPRESS)
    p = _Parser(prog="fleetopt", description="Fleet-wide technique generalization.")
    global_flags(p, None)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("select-reps", parents=[common], help="cluster the fleet and pick representatives")

    m = sub.add_parser("mmo", parents=[common], help="optimize every technique on the representatives")
    m.add_argument("--out", help="report path (default OUT_DIR/report.json)")
    m.add_argument("--log", help="trial log path (default OUT_DIR/trials.jsonl)")
    m.add_argument("--resume", help="continue from this trial log")

    s = sub.add_parser("sensitivity", parents=[common], help="linear sensitivity from a trial log")
    s.add_argument("--log", help="trial log (default OUT_DIR/trials.jsonl)")
    s.add_argument("--policy", help="exposure policy JSON")
    s.add_argument("--out", help="default OUT_DIR/sensitivity.json")
    s.add_argument("--all", action="store_true", help="analyze every technique, not only admitted ones")

    h = sub.add_parser("holdout", parents=[common], help="evaluate admitted optima on the holdout models")
    h.add_argument("--report", help="default OUT_DIR/report.json")
    h.add_argument("--out", help="default OUT_DIR/holdout.json")

    b = sub.add_parser("backtest", parents=[common], help="back-test a template version on the fleet")
    b.add_argument("--version", type=int, help="default: latest")
    b.add_argument("--out", help="default OUT_DIR/backtest.json")

    t = sub.add_parser("template", parents=[common], help="template registry operations")
    tsub = t.add_subparsers(dest="template_command", required=True, parser_class=_Parser)
    tc = tsub.add_parser("commit", parents=[common], help="commit admitted techniques as a new version")
    tc.add_argument("--report", help="default OUT_DIR/report.json")
    tc.add_argument("--sensitivity", help="default OUT_DIR/sensitivity.json")
    ti = tsub.add_parser("instantiate", parents=[common], help="resolve a template for one model")
    ti.add_argument("--model", required=True)
    ti.add_argument("--version", type=int)
    ti.add_argument("--overrides", help="JSON file {technique_id: {dim: value}}")
    ti.add_argument("--inputs", help="JSON file with opaque model inputs")
    td = tsub.add_parser("diff", parents=[common], help="compare two template versions")
    td.add_argument("a", type=int)
    td.add_argument("b", type=int)

    r = sub.add_parser("run", parents=[common], help="full pipeline")
    r.add_argument("--resume", action="store_true", help="continue from OUT_DIR/trials.jsonl")

    sub.add_parser("render", parents=[common], help="print a summary of OUT_DIR artifacts")
    return p


def _configure_logging(quiet: bool) -> None:
    level = os.environ.get("FLEETOPT_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigValidationError("--config", "a run configuration is required")
    cfg = load_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out_dir is not None:
        updates["out_dir"] = str(Path(args.out_dir).resolve())
    return cfg.replace(**updates) if updates else cfg


def _emit(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text)


def _cmd_select_reps(args, cfg):
    ctx = build_context(cfg)
    reps, holdout = step_select_reps(ctx)
    _emit(args, f"k={reps.k} representatives: {', '.join(reps.chosen_ids)}\n")
    _emit(args, f"holdout ({len(holdout.holdout_ids)}): {', '.join(holdout.holdout_ids)}\n")
    return EXIT_OK


def _cmd_mmo(args, cfg):
    ctx = build_context(cfg)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    reps, _ = load_reps(ctx)
    log_path = Path(args.resume or args.log or ctx.path("trials.jsonl"))
    report = step_mmo(ctx, reps, log_path, resume=bool(args.resume))
    out = {
        "status": "ok",
        "mmo": report.to_json(),
        "cost": iteration_cost_summary(report, len(ctx.fleet), len(ctx.techniques)).to_json(),
    }
    status = exit_status(report)
    if status != EXIT_OK:
        out["status"] = "no-feasible-technique"
    write_json(args.out or ctx.path("report.json"), out)
    _emit(args, f"admitted {len(report.generalized)} of {len(ctx.techniques)} techniques\n")
    return status


def _cmd_sensitivity(args, cfg):
    ctx = build_context(cfg)
    records = read_trial_log(args.log or ctx.path("trials.jsonl"), ctx.spaces)
    policy = cfg.policy
    if args.policy:
        policy = ExposurePolicy.from_json(read_json(args.policy))
    if args.all:
        tids = [t.id for t in ctx.techniques]
    else:
        tids = [g["technique_id"] for g in _read_report(ctx, None)["mmo"]["generalized"]]
    results = step_sensitivity(ctx, records, tids, policy)
    write_json(args.out or ctx.path("sensitivity.json"), sensitivity_json(results))
    for tid, r in results.items():
        text = r if isinstance(r, str) else ", ".join(f"{d}={v}" for d, v in r.decisions.items())
        _emit(args, f"{tid}: {text}\n")
    return EXIT_OK


def _read_report(ctx, path):
    path = Path(path or ctx.path("report.json"))
    if not path.exists():
        raise MissingArtifact(f"missing {path}")
    obj = read_json(path)
    if "mmo" not in obj:
        raise MissingArtifact(f"{path} has no optimization results")
    return obj


def _cmd_holdout(args, cfg):
    ctx = build_context(cfg)
    _, holdout = load_reps(ctx)
    generalized = generalized_from_json(_read_report(ctx, args.report)["mmo"], ctx.spaces)
    results = validate_holdout(
        generalized, ctx.fleet.subset(holdout.holdout_ids), ctx.require_evaluator(), cfg.thresholds,
        cfg.mmo.evaluation_repeats,
    )
    write_json(args.out or ctx.path("holdout.json"), [r.to_json(ctx.spaces[r.technique_id]) for r in results])
    for r in results:
        _emit(args, f"{r.technique_id}: transfer={r.transfer}\n")
    return EXIT_OK


def _registry(ctx) -> TemplateRegistry:
    return TemplateRegistry(ctx.path("templates.jsonl"))


def _version(registry: TemplateRegistry, version_id):
    if version_id is not None:
        return registry.get(version_id)
    v = registry.latest()
    if v is None:
        raise MissingArtifact(f"no template versions in {registry.path}")
    return v


def _cmd_backtest(args, cfg):
    ctx = build_context(cfg)
    version = _version(_registry(ctx), args.version)
    res = backtest(version, ctx.fleet, ctx.require_evaluator(), cfg.thresholds)
    write_json(args.out or ctx.path("backtest.json"), res.to_json())
    _emit(args, f"v{version.version_id}: {'pass' if res.passed else 'fail'}\n")
    return EXIT_OK


def _cmd_template(args, cfg):
    ctx = build_context(cfg)
    registry = _registry(ctx)
    if args.template_command == "commit":
        generalized = generalized_from_json(_read_report(ctx, args.report)["mmo"], ctx.spaces)
        sens_path = Path(args.sensitivity or ctx.path("sensitivity.json"))
        sens = {}
        if sens_path.exists():
            for tid, obj in read_json(sens_path).items():
                sens[tid] = obj["error"] if "error" in obj else SensitivityReport.from_json(obj)
        for g in generalized:
            sens.setdefault(g.technique_id, "no sensitivity report")
        version, _ = step_commit(ctx, generalized, sens, {"report": "report.json", "seed": cfg.seed})
        _emit(args, "nothing to commit\n" if version is None else f"committed v{version.version_id}\n")
        return EXIT_OK
    if args.template_command == "instantiate":
        version = _version(registry, args.version)
        overrides = read_json(args.overrides) if args.overrides else None
        inputs = read_json(args.inputs) if args.inputs else None
        inst = instantiate_model(version, ctx.fleet.get(args.model), overrides, inputs)
        write_json(ctx.path(f"instance-{args.model}.json"), inst.to_json(version))
        _emit(args, f"{args.model} instantiated from v{version.version_id}\n")
        return EXIT_OK
    diff = diff_versions(registry.get(args.a), registry.get(args.b))
    _emit(args, json.dumps(diff.to_json(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_run(args, cfg):
    status = run_pipeline(cfg, resume=args.resume)
    if (cfg.out_dir / "report.json").exists():
        _emit(args, render_report(cfg.out_dir))
    return status


def _cmd_render(args, cfg):
    _emit(args, render_report(cfg.out_dir))
    return EXIT_OK


COMMANDS = {
    "select-reps": _cmd_select_reps,
    "mmo": _cmd_mmo,
    "sensitivity": _cmd_sensitivity,
    "holdout": _cmd_holdout,
    "backtest": _cmd_backtest,
    "template": _cmd_template,
    "run": _cmd_run,
    "render": _cmd_render,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.quiet)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg)
    except (FleetOptError, OSError, ValueError, KeyError) as exc:
        print(f"fleetopt: error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
