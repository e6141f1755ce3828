"""Command-line interface.

Subcommands: gen-scenarios, calibrate, plan, coverage, compare,
dataset-conditional. Exit codes: 0 ok, 1 planning failure, 2 configuration
error, 3 transport error, 4 budget error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import conformal, harness, planner, scenario as scn, scoring, world
from .errors import (
    AuthError,
    BudgetError,
    ConfigError,
    ConfplanError,
    GenerationError,
    InfeasibleAlphaError,
    NoFeasibleError,
    OracleError,
    PlanningAborted,
    TransportError,
)


def _load_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_params(args) -> scn.DistributionParams:
    if getattr(args, "params", None):
        params = scn.params_from_dict(_load_json(args.params))
    else:
        params = scn.default_distribution_params()
    if getattr(args, "seed", None) is not None:
        params = replace(params, rng_seed=args.seed)
    return params


def _load_scorer_spec(args) -> scoring.ScorerSpec:
    text = getattr(args, "scorer", None) or "noisy-oracle"
    if text.endswith(".json"):
        spec = scoring.scorer_spec_from_dict(_load_json(text))
    else:
        spec = scoring.parse_scorer_spec(text)
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, rng_seed=args.seed + 1)
    return spec


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.config_from_dict(_load_json(args.config))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "alpha", None):
        overrides["alphas"] = tuple(args.alpha)
    if getattr(args, "scorer", None):
        overrides["scorer"] = _load_scorer_spec(args)
    if getattr(args, "trials", None):
        overrides["n_trials"] = args.trials
    return replace(cfg, **overrides) if overrides else cfg


def _emit_metrics(result: dict, fmt: str) -> None:
    metrics = result["metrics"]
    if fmt == "csv":
        sys.stdout.write(",".join(harness.CSV_COLUMNS) + "\n")
        for m in metrics:
            sys.stdout.write(
                ",".join(str(getattr(m, col)) for col in harness.CSV_COLUMNS) + "\n"
            )
    else:
        payload = [harness.metrics_to_dict(m) for m in metrics]
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def cmd_gen_scenarios(args) -> int:
    params = _load_params(args)
    scenarios = scn.scenario_stream(params, args.start, args.count)
    out = Path(args.out or "scenarios.json")
    scn.write_scenarios(scenarios, out)
    sizes = {len(scn.decision_space(s.env)) for s in scenarios}
    sys.stderr.write(
        f"wrote {len(scenarios)} scenarios to {out} (decision-space sizes: "
        f"{sorted(sizes)})\n"
    )
    return 0


def cmd_calibrate(args) -> int:
    spec = _load_scorer_spec(args)
    scorer = scoring.build_scorer(spec)
    if args.scenarios:
        scenarios = scn.read_scenarios(args.scenarios)
        records = []
        for s in scenarios:
            record, _ = conformal.score_label_sequence(
                s, scorer, label_mode=args.label_mode
            )
            records.append(record)
    else:
        params = _load_params(args)
        records = conformal.build_calibration_set(
            params, args.m, scorer, label_mode=args.label_mode
        )
    quantile = conformal.calibrate(records, args.alpha)
    out_dir = Path(args.out or "calibration")
    out_dir.mkdir(parents=True, exist_ok=True)
    conformal.write_records_jsonl(records, out_dir / "calibration.jsonl")
    summary = conformal.quantile_summary(quantile, [r.ncs for r in records])
    world.dump_json(summary, out_dir / "quantile.json")
    if quantile.full_set:
        need = conformal.min_calibration_size(args.alpha)
        sys.stderr.write(
            f"warning: M={quantile.n_calibration} is below the minimal calibration "
            f"size {need} for alpha={args.alpha}; the quantile is the FULL-SET "
            f"sentinel and every prediction set is the whole decision space\n"
        )
    sys.stderr.write(f"calibrated {len(records)} records -> {out_dir}\n")
    return 0


def _quantile_for_plan(args) -> conformal.Quantile:
    if args.quantile is not None:
        return conformal.Quantile(args.quantile, 0, args.alpha)
    if args.calibration:
        records = conformal.read_records_jsonl(args.calibration)
        return conformal.calibrate(records, args.alpha)
    raise ConfigError("plan needs --calibration or --quantile (except argmax mode)")


def cmd_plan(args) -> int:
    scenarios = scn.read_scenarios(args.scenario)
    scenario = scenarios[0]
    spec = _load_scorer_spec(args)
    scorer = scoring.build_scorer(spec)
    policy = planner.INTERACTIVE_USER if args.interactive else args.help_policy
    pcfg = planner.PlannerConfig(
        mode=args.mode,
        alpha=args.alpha,
        reorder_bound=args.reorders,
        help_policy=policy,
    )
    if args.mode == planner.ARGMAX:
        trace = planner.plan_argmax(scenario, scorer, pcfg)
    elif args.mode == planner.CENTRALIZED:
        quantile = _quantile_for_plan(args)
        if args.calibration:
            sys.stderr.write(
                "warning: reusing a sequence-level quantile for joint sets; the "
                "result is not a calibrated joint guarantee\n"
            )
        trace = planner.plan_centralized(scenario, scorer, quantile, pcfg)
    else:
        quantile = _quantile_for_plan(args)
        provider = None
        if args.feasible == "search":
            provider = planner.search_feasible_provider(scenario)
        trace = planner.plan_distributed(
            scenario, scorer, quantile, pcfg, feasible_provider=provider
        )
    result = scn.validate_scenario_plan(scenario, trace.plan)
    payload = planner.trace_to_dict(trace)
    payload["validation"] = {
        "complete": result.complete,
        "steps_used": result.steps_used,
        "reason": result.reason,
    }
    out = Path(args.out or "trace.json")
    world.dump_json(payload, out)
    sys.stderr.write(
        f"plan for {scenario.id}: complete={result.complete} "
        f"help={trace.n_user_help} calls={trace.scorer_calls} -> {out}\n"
    )
    return 1 if trace.failed else 0


def cmd_coverage(args) -> int:
    cfg = _load_config(args)
    result = harness.run_coverage_experiment(
        cfg, out_dir=args.out, jobs=args.jobs, log=sys.stderr.write
    )
    _emit_metrics(result, args.format)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    result = harness.run_comparison(cfg, out_dir=args.out, log=sys.stderr.write)
    _emit_metrics(result, args.format)
    return 0


def cmd_dataset_conditional(args) -> int:
    cfg = _load_config(args)
    result = harness.run_dataset_conditional(
        cfg, args.delta, out_dir=args.out, log=sys.stderr.write
    )
    _emit_metrics(result, args.format)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confplan",
        description="Conformal multi-robot planning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", default=None, help="output file or directory")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker count")

    p = sub.add_parser("gen-scenarios", help="sample scenarios to a JSON file")
    common(p)
    p.add_argument("--params", help="distribution params JSON file")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--start", type=int, default=0, help="first draw index")
    p.set_defaults(func=cmd_gen_scenarios)

    p = sub.add_parser("calibrate", help="build a calibration set and quantile")
    common(p)
    p.add_argument("--params", help="distribution params JSON file")
    p.add_argument("--scenarios", help="scenario JSON file (instead of sampling)")
    p.add_argument("--m", type=int, default=30, help="calibration size")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--scorer", default="noisy-oracle")
    p.add_argument("--label-mode", choices=("oracle", "selector"), default="oracle")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("plan", help="plan one scenario and write the trace")
    common(p)
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--calibration", help="calibration JSONL file")
    p.add_argument("--quantile", type=float, default=None, help="explicit quantile")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--scorer", default="noisy-oracle")
    p.add_argument(
        "--mode",
        choices=(planner.DISTRIBUTED, planner.CENTRALIZED, planner.ARGMAX),
        default=planner.DISTRIBUTED,
    )
    p.add_argument("--reorders", type=int, default=0, help="reorder bound W")
    p.add_argument(
        "--help-policy",
        choices=(planner.ORACLE_USER, planner.FAIL_ON_HELP),
        default=planner.ORACLE_USER,
    )
    p.add_argument(
        "--interactive",
        action="store_true",
        help="resolve help on the terminal (numbered set with scores)",
    )
    p.add_argument(
        "--feasible",
        choices=("teacher", "search"),
        default="teacher",
        help="feasible-set provider for simulated user help",
    )
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("coverage", help="marginal coverage experiment")
    common(p, jobs=True)
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--alpha", type=float, action="append", default=None)
    p.add_argument("--scorer", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("compare", help="distributed vs centralized comparison")
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--alpha", type=float, action="append", default=None)
    p.add_argument("--scorer", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "dataset-conditional", help="fixed-calibration coverage experiment"
    )
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--alpha", type=float, action="append", default=None)
    p.add_argument("--scorer", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_dataset_conditional)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PlanningAborted as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (AuthError, TransportError) as exc:
        sys.stderr.write(f"transport error: {exc}\n")
        return 3
    except BudgetError as exc:
        sys.stderr.write(f"budget error: {exc}\n")
        return 4
    except (
        ConfigError,
        GenerationError,
        OracleError,
        NoFeasibleError,
        InfeasibleAlphaError,
        ConfplanError,
        FileNotFoundError,
        json.JSONDecodeError,
        KeyError,
        ValueError,
    ) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
