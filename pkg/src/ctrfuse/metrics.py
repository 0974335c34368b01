"""Evaluation: AUC, logistic loss, per-banner daily averages, deltas versus a
baseline, and bootstrap confidence intervals for medians.

AUC uses the rank-based Mann-Whitney estimator with midrank tie handling.
Per-banner daily averages weight every qualifying banner equally; banners
without clicks (or without non-clicks) have no defined AUC and are excluded
from AUC averages, but still contribute to logloss averages when the click
filter allows.
"""

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .numerics import PROB_FLOOR


class UndefinedMetricError(ValueError):
    """The metric is undefined on this set (e.g. AUC on a single class)."""


@dataclass(frozen=True)
class ScoredSet:
    """Parallel scores and binary labels, optionally tagged by banner index."""

    scores: np.ndarray
    labels: np.ndarray
    banners: np.ndarray | None = None

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise ValueError("scores and labels must be equal-length 1-d arrays")
        if scores.size == 0:
            raise ValueError("a scored set must be non-empty")
        if scores.min() < 0.0 or scores.max() > 1.0:
            raise ValueError("scores must lie in [0, 1]")
        if not np.isin(labels, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        if self.banners is not None:
            banners = np.ascontiguousarray(self.banners, dtype=np.int64)
            if banners.shape != scores.shape:
                raise ValueError("banner tags must match scores in length")
            object.__setattr__(self, "banners", banners)

    def __len__(self) -> int:
        return self.scores.size


def auc(scored: ScoredSet) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    pos = scored.labels == 1.0
    n_pos = int(pos.sum())
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scored.scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(scored: ScoredSet) -> float:
    """Mean negative log-likelihood with probabilities clamped away from {0,1}."""
    p = np.clip(scored.scores, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = scored.labels
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())


@dataclass(frozen=True)
class BannerDayMetrics:
    """One banner's performance on one day; ``auc`` is None when undefined."""

    day: int
    banner: int
    n_clicks: int
    n_views: int
    auc: float | None
    logloss: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-banner rows plus equal-weight daily means under a click filter.

    ``auc_delta``/``logloss_delta`` are populated by :func:`relative_report`;
    positive AUC deltas and negative logloss deltas both mean the candidate
    beats the baseline.
    """

    rows: tuple[BannerDayMetrics, ...]
    min_clicks: int
    daily_auc: dict[int, float] = field(default_factory=dict)
    daily_logloss: dict[int, float] = field(default_factory=dict)
    auc_delta: dict[int, float] = field(default_factory=dict)
    logloss_delta: dict[int, float] = field(default_factory=dict)

    @property
    def days(self) -> list[int]:
        return sorted({row.day for row in self.rows})


def daily_means(
    rows: Sequence[BannerDayMetrics], min_clicks: int
) -> tuple[dict[int, float], dict[int, float]]:
    """Unweighted daily means over qualifying banners.

    AUC averages require a defined AUC and at least ``max(min_clicks, 1)``
    clicks; logloss averages require ``min_clicks`` clicks (0 keeps clickless
    banners in).
    """
    auc_by_day: dict[int, list[float]] = {}
    ll_by_day: dict[int, list[float]] = {}
    for row in rows:
        if row.auc is not None and row.n_clicks >= max(min_clicks, 1):
            auc_by_day.setdefault(row.day, []).append(row.auc)
        if row.n_clicks >= min_clicks:
            ll_by_day.setdefault(row.day, []).append(row.logloss)
    mean_auc = {day: float(np.mean(vals)) for day, vals in auc_by_day.items()}
    mean_ll = {day: float(np.mean(vals)) for day, vals in ll_by_day.items()}
    return mean_auc, mean_ll


def per_banner_daily(
    day_sets: Mapping[int, ScoredSet], min_clicks: int = 1
) -> MetricsReport:
    """Per-banner metrics for each day's tagged set, plus daily means."""
    rows: list[BannerDayMetrics] = []
    for day in sorted(day_sets):
        scored = day_sets[day]
        if scored.banners is None:
            raise ValueError("per-banner metrics need banner-tagged sets")
        for banner in np.unique(scored.banners):
            mask = scored.banners == banner
            subset = ScoredSet(scored.scores[mask], scored.labels[mask])
            n_clicks = int(subset.labels.sum())
            try:
                banner_auc = auc(subset)
            except UndefinedMetricError:
                banner_auc = None
            rows.append(
                BannerDayMetrics(
                    day, int(banner), n_clicks, len(subset), banner_auc, logloss(subset)
                )
            )
    mean_auc, mean_ll = daily_means(rows, min_clicks)
    return MetricsReport(tuple(rows), min_clicks, mean_auc, mean_ll)


def relative_report(candidate: MetricsReport, baseline: MetricsReport) -> MetricsReport:
    """Candidate report with per-day mean deltas against a baseline.

    AUC deltas are increases (candidate - baseline); logloss deltas keep the
    same sign convention, so negative is better. Both reports must cover the
    same days.
    """
    cand_days = set(candidate.daily_auc) | set(candidate.daily_logloss)
    base_days = set(baseline.daily_auc) | set(baseline.daily_logloss)
    if cand_days != base_days:
        raise ValueError(
            f"day mismatch between reports: {sorted(cand_days)} vs {sorted(base_days)}"
        )
    auc_delta = {
        day: candidate.daily_auc[day] - baseline.daily_auc[day]
        for day in candidate.daily_auc
        if day in baseline.daily_auc
    }
    ll_delta = {
        day: candidate.daily_logloss[day] - baseline.daily_logloss[day]
        for day in candidate.daily_logloss
        if day in baseline.daily_logloss
    }
    return replace(candidate, auc_delta=auc_delta, logloss_delta=ll_delta)


def concat_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Merge reports over disjoint days into one."""
    if not reports:
        raise ValueError("nothing to concatenate")
    min_clicks = reports[0].min_clicks
    rows: list[BannerDayMetrics] = []
    daily_auc: dict[int, float] = {}
    daily_ll: dict[int, float] = {}
    auc_delta: dict[int, float] = {}
    ll_delta: dict[int, float] = {}
    for report in reports:
        rows.extend(report.rows)
        daily_auc.update(report.daily_auc)
        daily_ll.update(report.daily_logloss)
        auc_delta.update(report.auc_delta)
        ll_delta.update(report.logloss_delta)
    return MetricsReport(tuple(rows), min_clicks, daily_auc, daily_ll, auc_delta, ll_delta)


def bootstrap_median_ci(
    values: Sequence[float],
    samples: int = 5000,
    lo: float = 0.05,
    hi: float = 0.95,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Median plus bootstrap quantile interval for it.

    Resamples with replacement ``samples`` times; the interval is the
    (lo, hi) empirical quantiles of the resampled medians. Deterministic for
    a given seed.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot bootstrap an empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(samples, arr.size))
    medians = np.median(arr[idx], axis=1)
    ci_lo, ci_hi = np.quantile(medians, [lo, hi])
    return float(np.median(arr)), float(ci_lo), float(ci_hi)


METRICS_COLUMNS = ["day", "banner_id", "n_clicks", "n_views", "auc", "logloss", "model_id"]
SUMMARY_COLUMNS = [
    "day",
    "model_id",
    "filter",
    "mean_auc",
    "mean_logloss",
    "delta_auc",
    "delta_logloss",
    "ci_lo",
    "ci_hi",
]


def write_metrics_csv(path, report: MetricsReport, model_id: str, banner_names=None):
    """One row per (day, banner); ``auc`` is empty when undefined.

    ``banner_names`` optionally maps banner indices back to raw ids; indices
    without a name (e.g. banners unseen at training) fall back to the index.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in report.rows:
            name = banner_names.get(row.banner, str(row.banner)) if banner_names else str(row.banner)
            writer.writerow(
                [
                    row.day,
                    name,
                    row.n_clicks,
                    row.n_views,
                    "" if row.auc is None else repr(row.auc),
                    repr(row.logloss),
                    model_id,
                ]
            )


def write_summary_csv(path, reports: Mapping[int, MetricsReport], model_id: str, seed: int = 0):
    """Per-day mean rows plus an ``overall`` row per click filter.

    The overall row holds medians across days and their bootstrap interval;
    with a baseline attached (see :func:`relative_report`) the deltas get the
    same treatment.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for min_clicks in sorted(reports):
            report = reports[min_clicks]
            has_delta = bool(report.auc_delta or report.logloss_delta)
            days = sorted(set(report.daily_auc) | set(report.daily_logloss))
            for day in days:
                writer.writerow(
                    [
                        day,
                        model_id,
                        min_clicks,
                        _fmt(report.daily_auc.get(day)),
                        _fmt(report.daily_logloss.get(day)),
                        _fmt(report.auc_delta.get(day)) if has_delta else "",
                        _fmt(report.logloss_delta.get(day)) if has_delta else "",
                        "",
                        "",
                    ]
                )
            series = (
                [report.auc_delta[d] for d in sorted(report.auc_delta)]
                if has_delta
                else [report.daily_auc[d] for d in sorted(report.daily_auc)]
            )
            if series:
                med, lo, hi = bootstrap_median_ci(series, seed=seed)
                ll_series = (
                    [report.logloss_delta[d] for d in sorted(report.logloss_delta)]
                    if has_delta
                    else [report.daily_logloss[d] for d in sorted(report.daily_logloss)]
                )
                ll_med = float(np.median(ll_series)) if ll_series else None
                writer.writerow(
                    [
                        "overall",
                        model_id,
                        min_clicks,
                        _fmt(med) if not has_delta else "",
                        _fmt(ll_med) if not has_delta else "",
                        _fmt(med) if has_delta else "",
                        _fmt(ll_med) if has_delta else "",
                        _fmt(lo),
                        _fmt(hi),
                    ]
                )


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))
