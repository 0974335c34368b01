import csv
import math

import numpy as np
import pytest

from ctrfuse.metrics import (
    BannerDayMetrics,
    MetricsReport,
    ScoredSet,
    UndefinedMetricError,
    auc,
    bootstrap_median_ci,
    concat_reports,
    daily_means,
    logloss,
    per_banner_daily,
    relative_report,
    write_metrics_csv,
    write_summary_csv,
)
from ctrfuse.numerics import logit, sigmoid


def pair_counting_auc(scores, labels):
    """Brute-force oracle: fraction of (pos, neg) pairs ranked correctly,
    ties counting one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    pos = scores[labels == 1.0]
    neg = scores[labels == 0.0]
    diff = pos[:, None] - neg[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return wins / (len(pos) * len(neg))


class TestAuc:
    def test_three_of_four_pairs(self):
        s = ScoredSet(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 0]))
        assert auc(s) == pytest.approx(0.75)

    def test_all_ties_give_half(self):
        s = ScoredSet(np.full(10, 0.3), np.array([1, 0] * 5))
        assert auc(s) == pytest.approx(0.5)

    def test_perfect_separation(self):
        s = ScoredSet(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0]))
        assert auc(s) == 1.0

    def test_single_class_raises(self):
        with pytest.raises(UndefinedMetricError):
            auc(ScoredSet(np.array([0.5, 0.6]), np.array([1, 1])))

    def test_equals_pair_counting_on_random_sets(self, rng):
        for trial in range(100):
            n = int(rng.integers(2, 1000))
            # coarse grid forces plenty of ties
            scores = rng.integers(0, 20, size=n) / 19.0
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            got = auc(ScoredSet(scores, labels))
            want = pair_counting_auc(scores, labels)
            assert got == pytest.approx(want, abs=1e-12)

    def test_invariant_under_monotone_transforms(self, rng):
        n = 400
        scores = rng.random(n)
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        base = auc(ScoredSet(scores, labels))
        for transform in (
            lambda s: s**2,
            lambda s: 0.1 + 0.8 * s,
            lambda s: sigmoid(2.0 * logit(np.clip(s, 1e-9, 1 - 1e-9)) + 0.3),
        ):
            assert auc(ScoredSet(transform(scores), labels)) == pytest.approx(base, abs=1e-12)


class TestLogloss:
    def test_half_everywhere_is_ln_two(self):
        s = ScoredSet(np.full(8, 0.5), np.array([1, 0] * 4))
        assert logloss(s) == pytest.approx(math.log(2))

    def test_perfect_predictions_clamp(self):
        s = ScoredSet(np.array([1.0, 0.0]), np.array([1, 0]))
        assert logloss(s) <= 1e-11

    def test_single_example(self):
        s = ScoredSet(np.array([0.8]), np.array([1]))
        assert logloss(s) == pytest.approx(-math.log(0.8), rel=1e-12)

    def test_minimized_by_base_rate_among_constants(self, rng):
        labels = (rng.random(500) < 0.3).astype(float)
        base = labels.mean()
        losses = {
            p: logloss(ScoredSet(np.full(500, p), labels))
            for p in np.linspace(0.05, 0.95, 19)
        }
        best = min(losses, key=losses.get)
        assert abs(best - base) <= 0.05 + 1e-9


class TestScoredSet:
    def test_rejects_out_of_range_scores(self):
        with pytest.raises(ValueError):
            ScoredSet(np.array([1.2]), np.array([1]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ScoredSet(np.array([]), np.array([]))

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            ScoredSet(np.array([0.5]), np.array([2]))


def tagged(scores, labels, banners):
    return ScoredSet(np.asarray(scores, float), np.asarray(labels, float), np.asarray(banners))


class TestPerBannerDaily:
    def test_unweighted_mean_of_two_banners(self):
        # banner 0 AUC 0.6..., banner 1 = 1.0; checking the mean is unweighted
        day = tagged(
            [0.9, 0.8, 0.7, 0.6, 0.9, 0.1],
            [1, 0, 1, 0, 1, 0],
            [0, 0, 0, 0, 1, 1],
        )
        report = per_banner_daily({3: day}, min_clicks=1)
        assert report.daily_auc[3] == pytest.approx((0.75 + 1.0) / 2)

    def test_clickless_banner_excluded_from_auc_kept_in_logloss(self):
        day = tagged([0.9, 0.1, 0.5, 0.4], [1, 0, 0, 0], [0, 0, 1, 1])
        report = per_banner_daily({0: day}, min_clicks=0)
        rows = {r.banner: r for r in report.rows}
        assert rows[1].auc is None
        assert report.daily_auc[0] == pytest.approx(1.0)  # only banner 0 qualifies
        assert report.daily_logloss[0] == pytest.approx(
            (rows[0].logloss + rows[1].logloss) / 2
        )

    def test_min_clicks_filter(self):
        scores = [0.9] * 9 + [0.1] + [0.8] * 10 + [0.2] * 2
        labels = [1] * 9 + [0] + [1] * 10 + [0] * 2
        banners = [0] * 10 + [1] * 12
        report = per_banner_daily({0: tagged(scores, labels, banners)}, min_clicks=10)
        # banner 0 has 9 clicks: excluded; banner 1 has 10: included
        assert report.daily_auc[0] == pytest.approx(1.0)
        rows = {r.banner: r for r in report.rows}
        assert rows[0].n_clicks == 9

    def test_needs_banner_tags(self):
        with pytest.raises(ValueError):
            per_banner_daily({0: ScoredSet(np.array([0.5]), np.array([1]))})


class TestRelativeReport:
    def _report(self, auc_by_day, ll_by_day):
        return MetricsReport((), 1, dict(auc_by_day), dict(ll_by_day))

    def test_identical_reports_zero_deltas(self):
        r = self._report({0: 0.7, 1: 0.72}, {0: 0.3, 1: 0.29})
        out = relative_report(r, r)
        assert out.auc_delta == {0: 0.0, 1: 0.0}
        assert out.logloss_delta == {0: 0.0, 1: 0.0}

    def test_positive_auc_delta(self):
        cand = self._report({0: 0.703}, {0: 0.31})
        base = self._report({0: 0.700}, {0: 0.30})
        out = relative_report(cand, base)
        assert out.auc_delta[0] == pytest.approx(0.003)
        assert out.logloss_delta[0] == pytest.approx(0.01)

    def test_missing_day_raises(self):
        cand = self._report({0: 0.7, 1: 0.7}, {0: 0.3, 1: 0.3})
        base = self._report({0: 0.7}, {0: 0.3})
        with pytest.raises(ValueError):
            relative_report(cand, base)


class TestBootstrapMedianCi:
    def test_constant_values_collapse(self):
        med, lo, hi = bootstrap_median_ci([4.2] * 50, seed=1)
        assert med == lo == hi == 4.2

    def test_single_value(self):
        med, lo, hi = bootstrap_median_ci([7.0], seed=3)
        assert (med, lo, hi) == (7.0, 7.0, 7.0)

    def test_deterministic_given_seed(self):
        values = list(np.random.default_rng(0).normal(0, 1, 200))
        a = bootstrap_median_ci(values, seed=11)
        b = bootstrap_median_ci(values, seed=11)
        assert a == b
        c = bootstrap_median_ci(values, seed=12)
        assert a != c

    def test_uniform_values_cover_median_and_width_shrinks(self):
        big = np.arange(1, 1001, dtype=float)
        med, lo, hi = bootstrap_median_ci(big, seed=5)
        assert lo <= 500.5 <= hi
        # same distribution at a tenth of the sample size: width ~ sqrt(10) larger
        small = np.arange(1, 1001, 10, dtype=float)  # 100 values spanning the same range
        _, lo_s, hi_s = bootstrap_median_ci(small, seed=5)
        ratio = (hi_s - lo_s) / (hi - lo)
        assert ratio == pytest.approx(math.sqrt(10), rel=0.30)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            bootstrap_median_ci([])


class TestCsvOutput:
    def _report(self):
        rows = (
            BannerDayMetrics(7, 0, 3, 20, 0.8, 0.25),
            BannerDayMetrics(7, 1, 0, 10, None, 0.1),
        )
        return MetricsReport(rows, 1, {7: 0.8}, {7: 0.175})

    def test_metrics_csv_columns_and_undefined_auc(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv(path, self._report(), "model-x", {0: "b0", 1: "b1"})
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["day", "banner_id", "n_clicks", "n_views", "auc", "logloss", "model_id"]
        assert rows[1][1] == "b0" and rows[2][4] == ""

    def test_summary_csv_has_overall_row(self, tmp_path):
        path = tmp_path / "s.csv"
        write_summary_csv(path, {1: self._report()}, "model-x", seed=0)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "day"
        assert rows[-1][0] == "overall"
        assert rows[-1][7] != "" and rows[-1][8] != ""

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_summary_csv(a, {1: self._report()}, "m", seed=4)
        write_summary_csv(b, {1: self._report()}, "m", seed=4)
        assert a.read_bytes() == b.read_bytes()


def test_daily_means_min_clicks_zero_includes_clickless():
    rows = [
        BannerDayMetrics(0, 0, 0, 5, None, 0.2),
        BannerDayMetrics(0, 1, 2, 5, 0.9, 0.4),
    ]
    auc_means, ll_means = daily_means(rows, 0)
    assert ll_means[0] == pytest.approx(0.3)
    assert auc_means[0] == pytest.approx(0.9)


def test_concat_reports_merges_days():
    r1 = MetricsReport((BannerDayMetrics(0, 0, 1, 2, 0.5, 0.3),), 1, {0: 0.5}, {0: 0.3})
    r2 = MetricsReport((BannerDayMetrics(1, 0, 1, 2, 0.7, 0.2),), 1, {1: 0.7}, {1: 0.2})
    merged = concat_reports([r1, r2])
    assert merged.days == [0, 1]
    assert merged.daily_auc == {0: 0.5, 1: 0.7}
