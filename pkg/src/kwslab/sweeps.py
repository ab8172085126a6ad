"""Sweep orchestration for the experiment families: training-data scaling,
temporal offsets around the token onset, and keyword choice."""

from __future__ import annotations

import dataclasses
import math
import os
import warnings
from collections import Counter

import numpy as np

from . import metrics as mx
from .corpus import SplitAssignment, build_task_spec, count_positives, select_splits
from .errors import InfeasibleSamplerError, InfeasibleTaskError, MissingKeywordError
from .training import evaluate, prepare_task, scored_set_from_rows, train


def seed_mean_se(values) -> tuple[float, float]:
    """Seed aggregate: mean and sample-SD / sqrt(n) standard error."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size <= 1:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def train_and_score_test(config, task, seed: int, workdir: str, tag: str):
    """One training run plus test-partition scoring; returns (record, scored)."""
    train_cfg = dataclasses.replace(config.training, seed=seed)
    checkpoint = os.path.join(workdir, f"{tag}_seed{seed}.ckpt")
    report = train(config.model, config.loss, config.sampler, train_cfg, task, checkpoint)
    rows = evaluate(checkpoint, task, "test")
    scored = scored_set_from_rows(rows)
    record = {
        "seed": seed,
        "auprc": mx.auprc(scored),
        "auroc": mx.auroc(scored),
        "best_val_auprc": report.best_val_auprc,
        "checkpoint": checkpoint,
    }
    return record, scored, report


def _sessions_for_split(sessions, split: SplitAssignment):
    wanted = set(split.all_sessions())
    return [s for s in sessions if s.session_id in wanted]


# ---------------------------------------------------------------------------
# scaling sweep
# ---------------------------------------------------------------------------


def subsample_train_sessions(train_ids, hours_by_id, fraction: float) -> list[str]:
    """Smallest session-id-ordered prefix whose unique hours reach
    fraction * total (always at least one session)."""
    ordered = sorted(train_ids)
    total = sum(hours_by_id[sid] for sid in ordered)
    target = fraction * total
    taken = []
    cum = 0.0
    for sid in ordered:
        taken.append(sid)
        cum += hours_by_id[sid]
        if cum >= target - 1e-12:
            break
    return taken


def run_scaling_sweep(config, sessions, default_split, fractions, workdir: str) -> dict:
    """Train/evaluate per (fraction, seed) with validation and test fixed;
    fit the slope of seed-mean AUPRC against log fraction."""
    os.makedirs(workdir, exist_ok=True)
    spec = build_task_spec(
        sessions, config.task.keywords, config.task.beta_neg_s, config.task.beta_pos_s
    )
    split = select_splits(sessions, spec, default_split)
    by_id = {s.session_id: s for s in sessions}
    hours = {sid: by_id[sid].duration_s / 3600.0 for sid in split.train}

    cells = []
    csv_rows = []
    feasible_points = []
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise InfeasibleTaskError(f"fractions must lie in (0, 1], got {fraction}")
        train_ids = subsample_train_sessions(split.train, hours, fraction)
        sub_split = SplitAssignment(
            train=train_ids, validation=split.validation, test=split.test
        )
        axis = {"fraction": fraction}
        n_train_positives = sum(
            count_positives(by_id[sid], spec.keywords) for sid in train_ids
        )
        if n_train_positives == 0:
            cells.append(
                {"axis": axis, "infeasible": True, "note": "no positive training examples"}
            )
            continue
        task = prepare_task(_sessions_for_split(sessions, sub_split), sub_split, spec)
        records, scoreds = [], []
        try:
            for seed in config.seeds:
                record, scored, _ = train_and_score_test(
                    config, task, seed, workdir, f"scaling_f{fraction:g}"
                )
                records.append(record)
                scoreds.append(scored)
        except InfeasibleSamplerError as exc:
            cells.append({"axis": axis, "infeasible": True, "note": str(exc)})
            continue
        perm = mx.seed_mean_permutation_pvalue(
            scoreds,
            "auprc",
            n_draws=config.evaluation.permutation_draws,
            seed=config.evaluation.stat_seed,
        )
        auprc_mean, auprc_se = seed_mean_se([r["auprc"] for r in records])
        auroc_mean, auroc_se = seed_mean_se([r["auroc"] for r in records])
        aggregate = {
            "auprc_mean": auprc_mean,
            "auprc_se": auprc_se,
            "auroc_mean": auroc_mean,
            "auroc_se": auroc_se,
            "p_value": perm.p_value,
            "unique_hours": sum(hours[sid] for sid in train_ids),
            "n_train_sessions": len(train_ids),
            "n_train_windows": len(task.partitions["train"]),
        }
        cells.append({"axis": axis, "infeasible": False, "per_seed": records,
                      "aggregate": aggregate})
        feasible_points.append((fraction, auprc_mean))
        for r in records:
            csv_rows.append({"fraction": fraction, "seed": r["seed"],
                             "auprc": r["auprc"], "auroc": r["auroc"]})
        csv_rows.append({"fraction": fraction, "seed": "mean",
                         "auprc": auprc_mean, "auroc": auroc_mean})
        csv_rows.append({"fraction": fraction, "seed": "se",
                         "auprc": auprc_se, "auroc": auroc_se})

    slope = None
    if len(feasible_points) >= 2:
        xs = np.log([f for f, _ in feasible_points])
        ys = np.array([a for _, a in feasible_points])
        slope = float(np.polyfit(xs, ys, 1)[0])
    return {
        "axis": "training_fraction",
        "cells": cells,
        "slope_auprc_vs_log_fraction": slope,
        "csv_rows": csv_rows,
        "csv_fields": ["fraction", "seed", "auprc", "auroc"],
    }


# ---------------------------------------------------------------------------
# temporal-offset sweep
# ---------------------------------------------------------------------------


def _bootstrap_mean_ci(values, n_resamples=4000, seed=0):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed,))))
    arr = np.asarray(values, dtype=np.float64)
    means = np.empty(n_resamples)
    for i in range(n_resamples):
        means[i] = arr[rng.integers(0, arr.size, size=arr.size)].mean()
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi), mx.se_from_ci(lo, hi)


def sign_flip_pvalue(deltas, n_draws=10000, seed=0) -> float:
    """One-sided randomization test: flip delta signs, count null means
    reaching the observed mean."""
    arr = np.asarray(deltas, dtype=np.float64)
    observed = arr.mean()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed,))))
    hits = 0
    for _ in range(n_draws):
        signs = rng.integers(0, 2, size=arr.size) * 2 - 1
        if (arr * signs).mean() >= observed:
            hits += 1
    return (1.0 + hits) / (n_draws + 1.0)


def paired_offset_improvement(
    cell_seed_auprc: dict,
    baseline_cell=(0.0, 0.0),
    n_resamples: int = 4000,
    n_draws: int = 10000,
    seed: int = 0,
) -> dict:
    """Paired per-seed deltas of every non-baseline cell against the
    baseline cell, with a bootstrap CI, CI-derived SE, and a one-sided
    sign-flip p-value."""
    if baseline_cell not in cell_seed_auprc or len(cell_seed_auprc) < 2:
        return {"flagged": True, "note": "baseline-only grid: improvement undefined"}
    baseline = cell_seed_auprc[baseline_cell]
    deltas = []
    for cell, per_seed in sorted(cell_seed_auprc.items()):
        if cell == baseline_cell:
            continue
        for s, value in sorted(per_seed.items()):
            if s in baseline:
                deltas.append(value - baseline[s])
    if not deltas:
        return {"flagged": True, "note": "no paired seeds between cells and baseline"}
    lo, hi, se = _bootstrap_mean_ci(deltas, n_resamples=n_resamples, seed=seed)
    return {
        "flagged": False,
        "mean_delta": float(np.mean(deltas)),
        "se": se,
        "ci95": [lo, hi],
        "p_value": sign_flip_pvalue(deltas, n_draws=n_draws, seed=seed),
        "n_pairs": len(deltas),
    }


def run_offsets_sweep(config, sessions, default_split, neg_grid, pos_grid, workdir: str) -> dict:
    """Train/evaluate per (beta_neg, beta_pos) cell; report per-cell seed
    mean +- SE, the argmax cell, and the paired improvement over (0, 0)."""
    os.makedirs(workdir, exist_ok=True)
    for value in list(neg_grid) + list(pos_grid):
        if value < 0:
            raise InfeasibleTaskError("offsets must be nonnegative seconds")
    split_spec = build_task_spec(sessions, config.task.keywords, 0.0, 0.0)
    split = select_splits(sessions, split_spec, default_split)

    cells = []
    csv_rows = []
    cell_seed_auprc = {}
    for neg in neg_grid:
        for pos in pos_grid:
            spec = build_task_spec(sessions, config.task.keywords, neg, pos)
            task = prepare_task(sessions, split, spec)
            records, scoreds = [], []
            for seed in config.seeds:
                record, scored, _ = train_and_score_test(
                    config, task, seed, workdir, f"offsets_n{neg:g}_p{pos:g}"
                )
                records.append(record)
                scoreds.append(scored)
            cell_seed_auprc[(neg, pos)] = {r["seed"]: r["auprc"] for r in records}
            auprc_mean, auprc_se = seed_mean_se([r["auprc"] for r in records])
            auroc_mean, auroc_se = seed_mean_se([r["auroc"] for r in records])
            cells.append(
                {
                    "axis": {"beta_neg_s": neg, "beta_pos_s": pos},
                    "infeasible": False,
                    "per_seed": records,
                    "aggregate": {
                        "auprc_mean": auprc_mean,
                        "auprc_se": auprc_se,
                        "auroc_mean": auroc_mean,
                        "auroc_se": auroc_se,
                        "window_s": spec.window_s,
                    },
                }
            )
            for r in records:
                csv_rows.append({"beta_neg_s": neg, "beta_pos_s": pos, "seed": r["seed"],
                                 "auprc": r["auprc"], "auroc": r["auroc"]})
            csv_rows.append({"beta_neg_s": neg, "beta_pos_s": pos, "seed": "mean",
                             "auprc": auprc_mean, "auroc": auroc_mean})
            csv_rows.append({"beta_neg_s": neg, "beta_pos_s": pos, "seed": "se",
                             "auprc": auprc_se, "auroc": auroc_se})

    best = max(
        (c for c in cells if not c["infeasible"]),
        key=lambda c: c["aggregate"]["auprc_mean"],
    )
    paired = paired_offset_improvement(
        cell_seed_auprc,
        baseline_cell=(0.0, 0.0),
        n_resamples=config.evaluation.bootstrap_resamples,
        n_draws=config.evaluation.permutation_draws,
        seed=config.evaluation.stat_seed,
    )
    return {
        "axis": "temporal_offsets",
        "cells": cells,
        "argmax_cell": best["axis"],
        "paired_improvement": paired,
        "csv_rows": csv_rows,
        "csv_fields": ["beta_neg_s", "beta_pos_s", "seed", "auprc", "auroc"],
    }


# ---------------------------------------------------------------------------
# keyword sweep
# ---------------------------------------------------------------------------


def corpus_token_counts(sessions) -> Counter:
    counts = Counter()
    for session in sessions:
        for ev in session.word_events():
            counts[ev.word] += 1
    return counts


def auto_keywords_by_length(sessions) -> list[str]:
    """Most frequent word at each character length, ordered by length."""
    counts = corpus_token_counts(sessions)
    best_per_length = {}
    for word, count in sorted(counts.items()):
        length = len(word)
        incumbent = best_per_length.get(length)
        if incumbent is None or count > counts[incumbent]:
            best_per_length[length] = word
    return [best_per_length[length] for length in sorted(best_per_length)]


def lexicon_length_frequency_spearman(sessions) -> tuple[float, float]:
    """Spearman correlation of word length (chars) vs log token frequency
    over the corpus vocabulary."""
    counts = corpus_token_counts(sessions)
    words = sorted(counts)
    lengths = [len(w) for w in words]
    log_freq = [math.log(counts[w]) for w in words]
    return mx.spearman_rank_corr(lengths, log_freq)


def best_f1_over_thresholds(scored) -> float:
    best = 0.0
    for point in mx.pr_curve(scored):
        if point.precision + point.recall > 0:
            best = max(
                best,
                2 * point.precision * point.recall / (point.precision + point.recall),
            )
    return best


def run_keywords_sweep(config, sessions, default_split, keywords, workdir: str) -> dict:
    """Per-keyword training/evaluation roster: base rate, AUPRC, AUROC,
    accuracy at tau, best F1 across thresholds, and %dAUPRC over the base
    rate (computed per seed, then averaged)."""
    os.makedirs(workdir, exist_ok=True)
    if keywords is None:
        keywords = auto_keywords_by_length(sessions)
    cells = []
    csv_rows = []
    tau = config.evaluation.tau
    for keyword in keywords:
        axis = {"keyword": keyword}
        try:
            spec = build_task_spec(
                sessions, {keyword}, config.task.beta_neg_s, config.task.beta_pos_s
            )
            split = select_splits(sessions, spec, default_split)
        except (MissingKeywordError, InfeasibleTaskError) as exc:
            warnings.warn(f"keyword {keyword!r} skipped: {exc}")
            cells.append({"axis": axis, "infeasible": True, "note": str(exc)})
            continue
        task = prepare_task(sessions, split, spec)
        records = []
        try:
            for seed in config.seeds:
                record, scored, _ = train_and_score_test(
                    config, task, seed, workdir, f"keyword_{keyword}"
                )
                record["accuracy"] = mx.thresholded_metrics(scored, tau).accuracy
                record["best_f1"] = best_f1_over_thresholds(scored)
                record["pct_delta_over_base"] = mx.pct_delta_over_base(
                    record["auprc"], scored.base_rate
                )
                record["base_rate"] = scored.base_rate
                records.append(record)
        except InfeasibleSamplerError as exc:
            warnings.warn(f"keyword {keyword!r} skipped: {exc}")
            cells.append({"axis": axis, "infeasible": True, "note": str(exc)})
            continue
        aggregate = {"base_rate": records[0]["base_rate"]}
        for name in ("auprc", "auroc", "accuracy", "best_f1", "pct_delta_over_base"):
            mean, se = seed_mean_se([r[name] for r in records])
            aggregate[f"{name}_mean"] = mean
            aggregate[f"{name}_se"] = se
        cells.append({"axis": axis, "infeasible": False, "per_seed": records,
                      "aggregate": aggregate})
        for r in records:
            csv_rows.append({"keyword": keyword, "seed": r["seed"], "auprc": r["auprc"],
                             "auroc": r["auroc"], "accuracy": r["accuracy"],
                             "best_f1": r["best_f1"],
                             "pct_delta_over_base": r["pct_delta_over_base"]})
        csv_rows.append({"keyword": keyword, "seed": "mean",
                         "auprc": aggregate["auprc_mean"], "auroc": aggregate["auroc_mean"],
                         "accuracy": aggregate["accuracy_mean"],
                         "best_f1": aggregate["best_f1_mean"],
                         "pct_delta_over_base": aggregate["pct_delta_over_base_mean"]})
        csv_rows.append({"keyword": keyword, "seed": "se",
                         "auprc": aggregate["auprc_se"], "auroc": aggregate["auroc_se"],
                         "accuracy": aggregate["accuracy_se"],
                         "best_f1": aggregate["best_f1_se"],
                         "pct_delta_over_base": aggregate["pct_delta_over_base_se"]})

    spearman_r, spearman_p = lexicon_length_frequency_spearman(sessions)
    return {
        "axis": "keyword",
        "cells": cells,
        "length_log_frequency_spearman": {"r": spearman_r, "p": spearman_p},
        "csv_rows": csv_rows,
        "csv_fields": ["keyword", "seed", "auprc", "auroc", "accuracy", "best_f1",
                       "pct_delta_over_base"],
    }
