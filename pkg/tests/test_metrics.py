import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as scipy_stats

import kwslab.metrics as mx
from helpers import brute_force_auroc, brute_force_average_precision
from kwslab.errors import UndefinedMetricError, ValidationError

RNG = np.random.default_rng(99)


def scored(scores, labels):
    return mx.ScoredSet(np.asarray(scores, float), np.asarray(labels))


class TestScoredSet:
    def test_base_rate(self):
        s = scored([0.1, 0.2, 0.3, 0.4], [1, 0, 0, 0])
        assert s.base_rate == 0.25 and s.n == 4 and s.n_positive == 1

    def test_validation(self):
        with pytest.raises(ValidationError):
            scored([0.1], [2])
        with pytest.raises(ValidationError):
            scored([], [])
        with pytest.raises(ValidationError):
            scored([0.1, 0.2], [1])


class TestPrCurve:
    def test_hand_enumeration(self):
        points = mx.pr_curve(scored([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]))
        assert [p.precision for p in points] == pytest.approx([1.0, 0.5, 2 / 3, 0.5])
        assert [p.recall for p in points] == pytest.approx([0.5, 0.5, 1.0, 1.0])
        assert [p.threshold for p in points] == [0.9, 0.8, 0.7, 0.6]

    def test_perfect_separation_prefix_precision_one(self):
        s = scored([0.9, 0.8, 0.7, 0.3, 0.2], [1, 1, 1, 0, 0])
        points = mx.pr_curve(s)
        assert all(p.precision == 1.0 for p in points[:3])

    def test_total_tie_single_point(self):
        points = mx.pr_curve(scored([0.5] * 8, [1, 0, 0, 0, 1, 0, 0, 0]))
        assert len(points) == 1
        assert points[0].precision == 0.25 and points[0].recall == 1.0

    def test_recall_non_decreasing(self):
        s = scored(RNG.random(50), RNG.integers(0, 2, 50))
        recalls = [p.recall for p in mx.pr_curve(s)]
        assert recalls == sorted(recalls)

    def test_no_positives_undefined(self):
        with pytest.raises(UndefinedMetricError):
            mx.pr_curve(scored([0.1, 0.2], [0, 0]))


class TestAuprc:
    def test_hand_average_precision(self):
        value = mx.auprc(scored([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]))
        assert value == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3), abs=1e-15)

    def test_perfect(self):
        assert mx.auprc(scored([0.9, 0.8, 0.1], [1, 1, 0])) == 1.0

    def test_reversed_perfect_is_brute_force_minimum(self):
        # worst ranking puts all positives after all negatives; brute-force
        # minimum over every ordering of 2 positives among 6
        n, k = 6, 2
        labels_options = set(itertools.permutations([1] * k + [0] * (n - k)))
        scores = np.linspace(1.0, 0.1, n)  # distinct, descending
        values = {mx.auprc(scored(scores, lab)) for lab in labels_options}
        reversed_perfect = mx.auprc(scored(scores, [0] * (n - k) + [1] * k))
        assert min(values) == pytest.approx(reversed_perfect, abs=1e-15)

    def test_matches_brute_force_oracle(self):
        for trial in range(60):
            rng = np.random.default_rng(trial)
            n = int(rng.integers(2, 13))
            labels = rng.integers(0, 2, n)
            if labels.sum() == 0:
                labels[rng.integers(0, n)] = 1
            scores = np.round(rng.random(n), 1)  # force ties
            s = scored(scores, labels)
            assert abs(mx.auprc(s) - brute_force_average_precision(scores, labels)) <= 1e-12

    def test_invariant_under_monotone_transform(self):
        scores = RNG.random(40)
        labels = RNG.integers(0, 2, 40)
        labels[0] = 1
        s1 = scored(scores, labels)
        s2 = scored(np.exp(3 * scores) + 5, labels)
        assert mx.auprc(s1) == mx.auprc(s2)
        assert mx.auroc(s1) == mx.auroc(s2)


class TestAuroc:
    def test_perfect(self):
        assert mx.auroc(scored([0.9, 0.8, 0.1], [1, 1, 0])) == 1.0

    def test_all_ties(self):
        assert mx.auroc(scored([0.5] * 6, [1, 0, 1, 0, 0, 0])) == 0.5

    def test_pair_enumeration(self):
        assert mx.auroc(scored([3, 2, 1], [1, 0, 1])) == 0.5

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            mx.auroc(scored([0.1, 0.2], [1, 1]))

    def test_matches_brute_force_oracle(self):
        for trial in range(60):
            rng = np.random.default_rng(1000 + trial)
            n = int(rng.integers(3, 13))
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 1, 0
            scores = np.round(rng.random(n), 1)
            s = scored(scores, labels)
            assert abs(mx.auroc(s) - brute_force_auroc(scores, labels)) <= 1e-12


class TestThresholded:
    def test_all_negative_predictor_on_imbalanced(self):
        n, k = 1000, 5
        labels = np.zeros(n, int)
        labels[:k] = 1
        s = scored(np.full(n, 0.1), labels)
        m = mx.thresholded_metrics(s, 0.5)
        assert m.mcc == 0.0
        assert m.accuracy == pytest.approx(1 - k / n)
        assert m.f1 == 0.0
        # macro structure: (0 + F1_neg) / 2
        f1_neg = 2 * (n - k) / (2 * (n - k) + k)
        assert m.f1_macro == pytest.approx(0.5 * f1_neg)

    def test_perfect_predictions(self):
        s = scored([0.9, 0.9, 0.1], [1, 1, 0])
        m = mx.thresholded_metrics(s, 0.5)
        assert (m.f1, m.f1_macro, m.accuracy, m.mcc) == (1.0, 1.0, 1.0, 1.0)

    def test_confusion_arithmetic(self):
        s = scored([0.9, 0.8], [1, 0])
        m = mx.thresholded_metrics(s, 0.5)
        assert m.f1 == pytest.approx(2 / 3)
        assert m.accuracy == 0.5

    def test_matches_sklearn_style_formulas(self):
        scores = RNG.random(200)
        labels = RNG.integers(0, 2, 200)
        s = scored(scores, labels)
        m = mx.thresholded_metrics(s, 0.5)
        pred = (scores >= 0.5).astype(int)
        tp = np.sum(pred & labels)
        fp = np.sum(pred & (1 - labels))
        fn = np.sum((1 - pred) & labels)
        tn = np.sum((1 - pred) & (1 - labels))
        mcc_oracle = (tp * tn - fp * fn) / math.sqrt(
            (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        )
        assert m.mcc == pytest.approx(mcc_oracle, abs=1e-12)
        assert m.accuracy == pytest.approx((tp + tn) / 200)


class TestBootstrap:
    def test_degenerate_identical_examples(self):
        # every example is the same (score, label) pair, so every resample
        # is the original set
        s = scored([0.7] * 10, [1] * 10)
        result = mx.bootstrap_ci(s, "auprc", n_resamples=100, seed=0)
        assert result.lo == result.hi == result.point
        assert result.se == 0.0 and not result.flagged

    def test_deterministic(self):
        scores = RNG.random(60)
        labels = RNG.integers(0, 2, 60)
        labels[0] = 1
        s = scored(scores, labels)
        a = mx.bootstrap_ci(s, "auprc", n_resamples=300, seed=7)
        b = mx.bootstrap_ci(s, "auprc", n_resamples=300, seed=7)
        assert a == b

    def test_redraws_counted_for_positive_dependent_metric(self):
        labels = np.zeros(12, int)
        labels[0] = 1  # 38% of resamples have no positives
        s = scored(RNG.random(12), labels)
        result = mx.bootstrap_ci(s, "auprc", n_resamples=200, seed=0)
        assert result.n_redrawn > 0

    def test_point_inside_interval(self):
        scores = RNG.random(200)
        labels = (scores + RNG.normal(0, 0.4, 200) > 0.7).astype(int)
        labels[0] = 1
        s = scored(scores, labels)
        result = mx.bootstrap_ci(s, "auroc", n_resamples=500, seed=1)
        assert result.lo <= result.point <= result.hi and not result.flagged

    def test_se_from_ci_published_values(self):
        se = mx.se_from_ci(0.0045, 0.0154)
        assert se == pytest.approx((0.0154 - 0.0045) / 3.92, abs=1e-15)
        assert abs(se - 0.0028) < 2e-4


class TestPermutation:
    def test_low_observation_high_p(self):
        scores = np.arange(100, dtype=float)
        labels = np.zeros(100, int)
        labels[:10] = 1  # positives get the lowest scores
        result = mx.permutation_pvalue(scored(scores, labels), "auprc",
                                       n_draws=500, seed=0)
        assert result.p_value > 0.5

    def test_add_one_floor(self):
        rng = np.random.default_rng(1)
        scores = np.concatenate([rng.uniform(0.9, 1.0, 5), rng.uniform(0.0, 0.5, 195)])
        labels = np.concatenate([np.ones(5, int), np.zeros(195, int)])
        result = mx.permutation_pvalue(scored(scores, labels), "auprc",
                                       n_draws=10000, seed=0)
        assert result.p_value == pytest.approx(1 / 10001)

    def test_null_mean_matches_exact_expectation_and_published_baseline(self):
        n, k = 4660, 24
        rng = np.random.default_rng(2)
        labels = np.zeros(n, int)
        labels[rng.choice(n, k, replace=False)] = 1
        s = scored(rng.random(n), labels)
        result = mx.permutation_pvalue(s, "auprc", n_draws=4000, seed=3)
        exact = mx.expected_random_auprc(n, k)
        # simulation noise: null SD ~ 0.0018 -> SE over 4000 draws ~ 3e-5
        assert result.null_mean == pytest.approx(exact, abs=2e-4)
        assert abs(result.null_mean - 0.007) < 5e-4  # the published baseline
        assert result.band[0] <= result.null_median <= result.band[1]

    def test_deterministic(self):
        scores = RNG.random(80)
        labels = RNG.integers(0, 2, 80)
        labels[0] = 1
        s = scored(scores, labels)
        a = mx.permutation_pvalue(s, "auroc", n_draws=200, seed=5)
        b = mx.permutation_pvalue(s, "auroc", n_draws=200, seed=5)
        assert a == b

    def test_fast_paths_match_generic_callable(self):
        scores = np.round(RNG.random(60), 1)
        labels = RNG.integers(0, 2, 60)
        labels[0], labels[1] = 1, 0
        s = scored(scores, labels)
        for name, fn in (("auprc", mx.auprc), ("auroc", mx.auroc),
                         ("f1_macro", mx.make_thresholded_metric("f1_macro", 0.5))):
            fast = mx.permutation_pvalue(s, name, n_draws=150, seed=9)
            generic = mx.permutation_pvalue(s, fn, n_draws=150, seed=9)
            assert fast.p_value == generic.p_value
            assert fast.null_mean == pytest.approx(generic.null_mean, abs=1e-12)

    def test_seed_mean_variant(self):
        labels = RNG.integers(0, 2, 50)
        labels[0], labels[1] = 1, 0
        sets = [scored(RNG.random(50), labels) for _ in range(3)]
        result = mx.seed_mean_permutation_pvalue(sets, "auprc", n_draws=200, seed=0)
        expected_obs = np.mean([mx.auprc(s) for s in sets])
        assert result.observed == pytest.approx(expected_obs, abs=1e-15)
        with pytest.raises(ValidationError):
            mx.seed_mean_permutation_pvalue(
                [sets[0], scored(RNG.random(50), 1 - labels)], "auprc", 10, 0
            )


class TestExpectedRandomAuprc:
    def test_enumeration_small_cases(self):
        # exact enumeration over all positive-position subsets
        for n, k in ((2, 1), (4, 1), (5, 2), (6, 3)):
            total = 0.0
            count = 0
            scores = np.linspace(1, 0, n)
            for positions in itertools.combinations(range(n), k):
                labels = np.zeros(n, int)
                labels[list(positions)] = 1
                total += mx.auprc(scored(scores, labels))
                count += 1
            assert mx.expected_random_auprc(n, k) == pytest.approx(total / count, abs=1e-12)

    def test_known_values(self):
        assert mx.expected_random_auprc(2, 1) == pytest.approx(0.75)
        assert mx.expected_random_auprc(4, 1) == pytest.approx((1 + 0.5 + 1 / 3 + 0.25) / 4)


class TestDerivedStats:
    def test_pct_delta(self):
        assert mx.pct_delta_over_base(0.05, 0.05) == 0.0
        assert mx.pct_delta_over_base(0.05, 0.01) == pytest.approx(400.0)
        with pytest.raises(UndefinedMetricError):
            mx.pct_delta_over_base(0.05, 0.0)

    def test_published_ratio(self):
        assert 0.094 / 0.007 == pytest.approx(13.43, abs=0.01)

    def test_spearman_exact_cases(self):
        r, p = mx.spearman_rank_corr([1, 2, 3], [3, 2, 1])
        assert r == -1.0 and p == 0.0
        r, _ = mx.spearman_rank_corr([1, 2, 3, 4], [np.exp(1), np.exp(2), np.exp(3), np.exp(4)])
        assert r == 1.0
        r, _ = mx.spearman_rank_corr([1, 2, 3, 4], [1, 3, 2, 4])
        assert r == pytest.approx(0.8)

    def test_spearman_matches_scipy(self):
        for trial in range(20):
            rng = np.random.default_rng(trial)
            n = int(rng.integers(5, 30))
            x = np.round(rng.random(n), 1)  # ties likely
            y = np.round(rng.random(n), 1)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            r, p = mx.spearman_rank_corr(x, y)
            ref = scipy_stats.spearmanr(x, y)
            assert r == pytest.approx(ref.statistic, abs=1e-12)
            assert p == pytest.approx(ref.pvalue, abs=1e-9)

    def test_spearman_input_contracts(self):
        with pytest.raises(ValidationError):
            mx.spearman_rank_corr([1, 2], [1, 2])
        with pytest.raises(UndefinedMetricError):
            mx.spearman_rank_corr([1, 1, 1], [1, 2, 3])


class TestMetricsReport:
    def test_structure_and_baseline_from_null(self):
        rng = np.random.default_rng(0)
        scores = rng.random(300)
        labels = (scores + rng.normal(0, 0.3, 300) > 0.8).astype(int)
        labels[0] = 1
        s = scored(scores, labels)
        report = mx.build_metrics_report(s, tau=0.5, n_resamples=200, n_draws=300, seed=0)
        assert set(report.entries) == set(mx.REPORT_METRICS)
        payload = report.to_dict()
        assert payload["threshold"] == 0.5
        for name in mx.REPORT_METRICS:
            entry = payload["metrics"][name]
            assert entry["ci95"][0] <= entry["ci95"][1]
            assert 0 < entry["p_value"] <= 1
        # the AUPRC baseline column comes from the permutation null, so it
        # exceeds the base rate at this positive count rather than equal it
        assert payload["metrics"]["auprc"]["baseline"] > 0


@given(st.lists(st.floats(0, 1), min_size=4, max_size=40))
@settings(max_examples=40, deadline=None)
def test_auprc_bounds_property(values):
    scores = np.asarray(values, float)
    labels = np.zeros(len(scores), int)
    labels[: max(1, len(scores) // 3)] = 1
    value = mx.auprc(scored(scores, labels))
    assert 0.0 <= value <= 1.0
