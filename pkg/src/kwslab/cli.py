"""Command-line driver: synth, train, evaluate, the three sweeps,
operating-point translation, and report rendering.

Exit codes: 0 success, 1 validation/config errors, 2 runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import metrics as mx
from .config import load_run_config
from .corpus import build_task_spec, load_corpus, save_corpus, select_splits
from .errors import (
    CheckpointError,
    ConfigError,
    EventsParseError,
    InfeasibleSamplerError,
    InfeasibleTaskError,
    KwslabError,
    MissingKeywordError,
    UndefinedMetricError,
    UndefinedOperatingPointError,
    ValidationError,
)
from .fixtures import load_reference_tables, reference_operating_curves
from .operate import (
    empirical_fp_per_hour,
    recall_vs_fa_curve,
    select_threshold_max_recall,
    select_threshold_min_fa,
)
from .reports import (
    provenance_block,
    read_json_report,
    render_metrics_table,
    render_operating_points,
    render_sweep_summary,
    write_json_report,
    write_rows_csv,
)
from .sweeps import (
    run_keywords_sweep,
    run_offsets_sweep,
    run_scaling_sweep,
    seed_mean_se,
)
from .synthgen import default_split as synth_default_split
from .synthgen import generate_corpus
from .training import (
    evaluate,
    prepare_task,
    read_scores_csv,
    scored_set_from_rows,
    train,
    write_scores_csv,
)

_VALIDATION_ERRORS = (
    ConfigError,
    ValidationError,
    InfeasibleTaskError,
    InfeasibleSamplerError,
    MissingKeywordError,
    EventsParseError,
    UndefinedMetricError,
    UndefinedOperatingPointError,
    CheckpointError,
    FileNotFoundError,
)


def _checkpoint_path(workdir: str, seed: int) -> str:
    return os.path.join(workdir, f"checkpoint_seed{seed}.ckpt")


def _load_task(config):
    root = config.resolved_root()
    sessions, default = load_corpus(root)
    spec = build_task_spec(
        sessions, config.task.keywords, config.task.beta_neg_s, config.task.beta_pos_s
    )
    split = select_splits(sessions, spec, default)
    task = prepare_task(sessions, split, spec)
    return root, sessions, default, spec, split, task


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = load_run_config(args.config, args.set)
    if config.corpus.synth is None:
        raise ConfigError("synth command needs a corpus.synth section")
    root = args.out or config.resolved_root()
    if root is None:
        raise ConfigError("synth command needs corpus.root or --out")
    sessions, _ = generate_corpus(config.corpus.synth)
    split = synth_default_split(sessions)
    save_corpus(sessions, root, split)
    n_tokens = sum(len(s.word_events()) for s in sessions)
    hours = sum(s.duration_s for s in sessions) / 3600.0
    print(f"corpus written to {root}")
    print(f"sessions: {len(sessions)}  tokens: {n_tokens}  hours: {hours:.2f}")
    print(f"default split: validation={split.validation} test={split.test}")
    return 0


def cmd_train(args) -> int:
    config = load_run_config(args.config, args.set, require_corpus=True)
    os.makedirs(args.workdir, exist_ok=True)
    root, _, _, spec, split, task = _load_task(config)
    seeds_payload = {}
    wall = {}
    for seed in config.seeds:
        train_cfg = dataclasses.replace(config.training, seed=seed)
        report = train(
            config.model, config.loss, config.sampler, train_cfg, task,
            _checkpoint_path(args.workdir, seed),
        )
        view = report.deterministic_view()
        view["checkpoint_path"] = os.path.basename(view["checkpoint_path"])
        seeds_payload[str(seed)] = view
        wall[str(seed)] = report.wall_clock_s
        print(
            f"seed {seed}: best val AUPRC {report.best_val_auprc:.4f} "
            f"at epoch {report.best_epoch:g} ({report.wall_clock_s:.1f}s)"
        )
    payload = {
        "provenance": provenance_block(config, root),
        "task": {"keywords": sorted(spec.keywords), "window_s": spec.window_s,
                 "validation": split.validation, "test": split.test},
        "seeds": seeds_payload,
        "wall_clock_s": wall,
    }
    write_json_report(os.path.join(args.workdir, "train_report.json"), payload)
    return 0


def cmd_evaluate(args) -> int:
    config = load_run_config(args.config, args.set, require_corpus=True)
    os.makedirs(args.workdir, exist_ok=True)
    root, _, _, spec, split, task = _load_task(config)
    ev = config.evaluation
    per_seed = {}
    scoreds = []
    for seed in config.seeds:
        ckpt = _checkpoint_path(args.workdir, seed)
        if not os.path.exists(ckpt):
            raise CheckpointError(f"missing checkpoint {ckpt}; run `train` first")
        rows = evaluate(ckpt, task, args.partition)
        write_scores_csv(rows, os.path.join(args.workdir, f"scores_seed{seed}.csv"))
        scored = scored_set_from_rows(rows)
        scoreds.append(scored)
        report = mx.build_metrics_report(
            scored, tau=ev.tau, n_resamples=ev.bootstrap_resamples,
            n_draws=ev.permutation_draws, seed=ev.stat_seed,
        )
        per_seed[str(seed)] = report.to_dict()
    seed_mean = {}
    for name in mx.REPORT_METRICS:
        values = [per_seed[str(s)]["metrics"][name]["value"] for s in config.seeds]
        mean, se = seed_mean_se(values)
        perm = mx.seed_mean_permutation_pvalue(
            scoreds, name, n_draws=ev.permutation_draws, seed=ev.stat_seed, tau=ev.tau
        )
        seed_mean[name] = {
            "value": mean,
            "se": se,
            "p_value": perm.p_value,
            "baseline": perm.null_mean,
            "null_median": perm.null_median,
            "pct_improvement": (
                100.0 * (mean - perm.null_mean) / perm.null_mean
                if perm.null_mean > 0 else None
            ),
        }
    payload = {
        "provenance": provenance_block(config, root),
        "partition": args.partition,
        "threshold": ev.tau,
        "per_seed": per_seed,
        "seed_mean": {"metrics": seed_mean},
    }
    write_json_report(os.path.join(args.workdir, "evaluation_report.json"), payload)
    print(render_metrics_table(payload["seed_mean"]))
    return 0


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _finish_sweep(args, config, root, payload) -> int:
    payload["provenance"] = provenance_block(config, root)
    csv_rows = payload.pop("csv_rows")
    csv_fields = payload.pop("csv_fields")
    write_rows_csv(os.path.join(args.workdir, "sweep.csv"), csv_fields, csv_rows)
    write_json_report(os.path.join(args.workdir, "sweep_report.json"), payload)
    print(render_sweep_summary(payload))
    return 0


def cmd_sweep_scaling(args) -> int:
    config = load_run_config(args.config, args.set, require_corpus=True)
    os.makedirs(args.workdir, exist_ok=True)
    root = config.resolved_root()
    sessions, default = load_corpus(root)
    payload = run_scaling_sweep(
        config, sessions, default, _parse_float_list(args.fractions), args.workdir
    )
    return _finish_sweep(args, config, root, payload)


def cmd_sweep_offsets(args) -> int:
    config = load_run_config(args.config, args.set, require_corpus=True)
    os.makedirs(args.workdir, exist_ok=True)
    root = config.resolved_root()
    sessions, default = load_corpus(root)
    payload = run_offsets_sweep(
        config, sessions, default,
        _parse_float_list(args.neg_grid), _parse_float_list(args.pos_grid),
        args.workdir,
    )
    return _finish_sweep(args, config, root, payload)


def cmd_sweep_keywords(args) -> int:
    config = load_run_config(args.config, args.set, require_corpus=True)
    os.makedirs(args.workdir, exist_ok=True)
    root = config.resolved_root()
    sessions, default = load_corpus(root)
    keywords = None if args.keywords == "auto" else [
        k.strip() for k in args.keywords.split(",") if k.strip()
    ]
    payload = run_keywords_sweep(config, sessions, default, keywords, args.workdir)
    return _finish_sweep(args, config, root, payload)


def _operating_rows_for_scenario(scenario, curves, fp_rates, target_recall, budgets):
    fa_points = [select_threshold_min_fa(curve, scenario, target_recall) for curve in curves]
    fa_mean, fa_se = seed_mean_se([p.fa_per_hour for p in fa_points])
    rows = {
        "fa_at_target_recall": {
            "mean": fa_mean,
            "se": fa_se,
            "per_seed": [p.to_dict() for p in fa_points],
        },
        "recall_at_budgets": [],
    }
    for budget in budgets:
        points = [select_threshold_max_recall(curve, scenario, budget) for curve in curves]
        mean, se = seed_mean_se([p.recall for p in points])
        rows["recall_at_budgets"].append(
            {
                "budget": budget,
                "mean": mean,
                "se": se,
                "feasible": all(p.feasible for p in points),
                "per_seed": [p.to_dict() for p in points],
            }
        )
    if fp_rates is not None:
        fp_mean, fp_se = seed_mean_se(fp_rates)
        rows["fp_per_hour"] = {"mean": fp_mean, "se": fp_se, "per_seed": list(fp_rates)}
    return rows, fa_points


def cmd_operating_points(args) -> int:
    config = load_run_config(args.config, args.set)
    os.makedirs(args.workdir, exist_ok=True)
    ev = config.evaluation
    target_recall = ev.target_recall
    budgets = list(ev.fa_budgets)
    scenarios = list(ev.scenarios)

    if args.fixture:
        tables = load_reference_tables()["operating_points"]
        curves = reference_operating_curves()
        window_s = tables["window_s"]
        n_windows = tables["n_windows"]
        fp_rates = [
            count * 3600.0 / (n_windows * window_s)
            for count in tables["per_seed_fp_counts"]
        ]
        source = "bundled reference fixture"
        scored_sets = None
    else:
        if not args.scores:
            raise ConfigError("operating-points needs --scores files or --fixture")
        scored_sets = [scored_set_from_rows(read_scores_csv(path)) for path in args.scores]
        if any(s.n == 0 for s in scored_sets):
            raise ValidationError("scores file contains no rows")
        curves = [mx.pr_curve(s) for s in scored_sets]
        root = config.resolved_root()
        if root and os.path.exists(os.path.join(root, "manifest.json")):
            sessions, _ = load_corpus(root)
            spec = build_task_spec(
                sessions, config.task.keywords, config.task.beta_neg_s,
                config.task.beta_pos_s,
            )
            window_s = spec.window_s
        else:
            window_s = args.window_s
        if window_s is None:
            raise ConfigError("need a corpus or --window-s to compute FP/h coverage")
        fp_rates = None
        source = ",".join(args.scores)

    scenario_payloads = []
    fa_csv_rows = []
    for scenario in scenarios:
        rates = fp_rates
        if scored_sets is not None:
            fa_points = [
                select_threshold_min_fa(curve, scenario, target_recall) for curve in curves
            ]
            rates = [
                empirical_fp_per_hour(s.scores, s.labels, p.threshold, window_s)
                for s, p in zip(scored_sets, fa_points)
            ]
        rows, _ = _operating_rows_for_scenario(
            scenario, curves, rates, target_recall, budgets
        )
        scenario_payloads.append(
            {
                "scenario": {"name": scenario.name, "lambda_per_hour": scenario.lambda_per_hour},
                "target_recall": target_recall,
                "rows": rows,
            }
        )
        for seed_idx, curve in enumerate(curves):
            for fa, recall in recall_vs_fa_curve(curve, scenario):
                fa_csv_rows.append(
                    {"scenario": scenario.name, "seed_index": seed_idx,
                     "fa_per_hour": fa, "recall": recall}
                )
    payload = {
        "provenance": provenance_block(config),
        "source": source,
        "window_s": window_s,
        "scenarios": scenario_payloads,
    }
    write_json_report(os.path.join(args.workdir, "operating_points.json"), payload)
    write_rows_csv(
        os.path.join(args.workdir, "recall_vs_fa.csv"),
        ["scenario", "seed_index", "fa_per_hour", "recall"],
        fa_csv_rows,
    )
    print(render_operating_points(payload))
    return 0


def cmd_report(args) -> int:
    payload = read_json_report(args.input)
    if "scenarios" in payload:
        print(render_operating_points(payload))
    elif "cells" in payload:
        print(render_sweep_summary(payload))
    elif "seed_mean" in payload:
        print(render_metrics_table(payload["seed_mean"]))
    elif "metrics" in payload:
        print(render_metrics_table(payload))
    else:
        raise ValidationError(f"{args.input}: unrecognized report payload")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kwslab",
        description="Keyword-spotting workbench: synthetic corpora, detector "
        "training, and imbalance-aware evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workdir=True):
        p.add_argument("--config", required=True, help="run-config JSON path")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config override (repeatable)")
        if workdir:
            p.add_argument("--workdir", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p, workdir=False)
    p.add_argument("--out", help="corpus directory (defaults to corpus.root)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one detector per seed")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints and build metric reports")
    common(p)
    p.add_argument("--partition", default="test", choices=["train", "validation", "test"])
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep-scaling", help="training-fraction sweep")
    common(p)
    p.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
    p.set_defaults(fn=cmd_sweep_scaling)

    p = sub.add_parser("sweep-offsets", help="pre/post-onset buffer sweep")
    common(p)
    p.add_argument("--neg-grid", default="0,0.05,0.1,0.15,0.2", dest="neg_grid")
    p.add_argument("--pos-grid", default="0,0.05,0.1,0.15,0.2,0.25,0.3", dest="pos_grid")
    p.set_defaults(fn=cmd_sweep_offsets)

    p = sub.add_parser("sweep-keywords", help="per-keyword detectability sweep")
    common(p)
    p.add_argument("--keywords", default="auto",
                   help="comma-separated keywords, or 'auto' for the most "
                   "frequent word per length bucket")
    p.set_defaults(fn=cmd_sweep_keywords)

    p = sub.add_parser("operating-points", help="threshold selection and hourly rates")
    common(p)
    p.add_argument("--scores", action="append", default=[],
                   help="scores CSV (repeat for per-seed files)")
    p.add_argument("--fixture", action="store_true",
                   help="use the bundled reference curves instead of scores files")
    p.add_argument("--window-s", type=float, default=None, dest="window_s",
                   help="window seconds for FP/h coverage when no corpus is available")
    p.set_defaults(fn=cmd_operating_points)

    p = sub.add_parser("report", help="render a saved JSON report as text")
    p.add_argument("--input", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KwslabError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
