"""Sequential day-over-day experiment driver and the staged hyperparameter
sweep.

Each test day is preceded by a rolling training window. The first training
runs the full alternation schedule; subsequent days warm start from the
previous day's model and run a single alternation. Training windows may be
negative-down-sampled (test days never are); the resulting intercept
correction is attached to the trained model.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import csv
import time

import numpy as np

from . import combined, factorization, sidemodel
from .combined import CombinedModel, TrainingInfo, predict_many
from .core import Hyperparameters, LatentFactors, SideModel
from .factorization import FactorizationProblem, OffsetTable
from .ingest import DatasetDay, downsample_day, event_arrays, merge_days
from .metrics import MetricsReport, ScoredSet, auc, logloss, per_banner_daily
from .sidemodel import SideProblem, intercept_correction

FAMILIES = ("lr", "lfl", "lr+lfl")


def train_family(
    data: DatasetDay,
    hyper: Hyperparameters,
    family: str = "lr+lfl",
    init: CombinedModel | None = None,
    alternations: int | None = None,
) -> CombinedModel:
    """Train one model family on a (possibly merged) training day.

    ``"lr"`` fits the side model alone, ``"lfl"`` the factors alone (with
    order ``hyper.order``; order 0 is biases only), and ``"lr+lfl"`` the full
    alternating combination. All families receive the down-sampling
    intercept correction for prediction time.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; pick one of {FAMILIES}")
    if not data.events:
        raise ValueError("cannot train on an empty day")
    correction = intercept_correction(data.neg_keep_rate)
    if family == "lr+lfl":
        return combined.train_alternating(data, hyper, init=init, alternations=alternations)
    if family == "lr":
        events = list(data.events)
        dim = max((ev.features.dim for ev in events), default=0)
        if init is not None:
            side = combined._extend_side(init.side, dim)
            side = SideModel(side.weights, side.intercept, 0.0)
        else:
            side = SideModel.zeros(dim)
        problem = SideProblem(events, np.zeros(len(events)), hyper.lambda_lr, hyper.optimizer)
        side = sidemodel.fit_lr(problem, side)
        return CombinedModel(
            None,
            SideModel(side.weights, side.intercept, correction),
            0,
            TrainingInfo(1, data.day),
        )
    # family == "lfl": pure factorization, zero offsets, side model inert
    rng = np.random.default_rng(hyper.optimizer.seed)
    bi, dj, _ = event_arrays(list(data.events))
    n_banners = int(bi.max()) + 1
    n_domains = int(dj.max()) + 1
    if init is not None and init.factors is not None and init.order == hyper.order:
        factors = combined.extend_factors(init.factors, n_banners, n_domains, rng)
    else:
        factors = LatentFactors.random_init(hyper.order, n_banners, n_domains, rng)
    problem = FactorizationProblem(data.aggregates, OffsetTable(), hyper)
    factors = factorization.fit(problem, factors)
    dim = max((ev.features.dim for ev in data.events), default=0)
    side = SideModel(np.zeros(dim), 0.0, correction)
    return CombinedModel(factors, side, hyper.order, TrainingInfo(1, data.day))


def score_day(model: CombinedModel, day: DatasetDay) -> ScoredSet:
    """Banner-tagged predictions for every event of a day."""
    events = list(day.events)
    if not events:
        raise ValueError(f"day {day.day} has no events to score")
    scores = predict_many(model, events)
    bi, _, labels = event_arrays(events)
    return ScoredSet(scores, labels, bi)


@dataclass(frozen=True)
class SequentialResult:
    """One test day's report and the model that produced it."""

    day: int
    report: MetricsReport
    model: CombinedModel


def run_sequential(
    days: Sequence[DatasetDay],
    hyper: Hyperparameters,
    window: int = 7,
    family: str = "lr+lfl",
    neg_downsample: float = 1.0,
    min_clicks: int = 1,
    seed: int = 0,
) -> list[SequentialResult]:
    """Roll a training window across the days and test on each next day.

    Day ``t`` is tested with a model trained on days ``[t-window, t)``. The
    first training is cold (full alternations); later ones warm start from
    the previous day's model with a single alternation. Training windows are
    down-sampled by ``neg_downsample`` (deterministically per test day);
    test days are left untouched.
    """
    if len(days) < window + 1:
        raise ValueError(f"need at least {window + 1} days, got {len(days)}")
    results: list[SequentialResult] = []
    model: CombinedModel | None = None
    for t in range(window, len(days)):
        train_day = merge_days(days[t - window : t])
        if neg_downsample > 1:
            sub_seed = np.random.SeedSequence((seed, t)).generate_state(1)[0]
            train_day = downsample_day(train_day, neg_downsample, int(sub_seed))
        model = train_family(train_day, hyper, family, init=model)
        scored = score_day(model, days[t])
        report = per_banner_daily({days[t].day: scored}, min_clicks)
        results.append(SequentialResult(days[t].day, report, model))
    return results


@dataclass(frozen=True)
class SweepGrids:
    """Value grids for the staged sweep."""

    lambda_lr: tuple[float, ...]
    lambda_bias: tuple[float, ...]
    lambda_latent: tuple[float, ...]
    orders: tuple[int, ...]

    def __post_init__(self):
        for name in ("lambda_lr", "lambda_bias", "lambda_latent", "orders"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"empty grid for {name}")
            object.__setattr__(self, name, values)


def default_grids() -> SweepGrids:
    return SweepGrids(
        lambda_lr=tuple(float(v) for v in np.arange(2.0, 7.0 + 0.25, 0.5)),
        lambda_bias=(0.3, 1.0, 3.0, 10.0, 30.0),
        lambda_latent=(0.3, 1.0, 3.0, 10.0),
        orders=(0, 2, 5),
    )


@dataclass(frozen=True)
class SweepRow:
    """One trained configuration and its validation performance."""

    stage: int
    family: str
    order: int
    penalty: str
    lambda_lr: float
    lambda_bias: float
    lambda_latent: float
    val_auc: float
    val_logloss: float
    train_seconds: float


@dataclass(frozen=True)
class SweepOutcome:
    rows: tuple[SweepRow, ...]
    best: Hyperparameters
    best_family: str

    def ranked(self) -> list[SweepRow]:
        """Final-stage configurations, best validation AUC first."""
        stage4 = [row for row in self.rows if row.stage == 4]
        return sorted(stage4, key=lambda r: (-r.val_auc, r.val_logloss))


def _neighborhood(grid: Sequence[float], best: float, expansions: int = 0) -> list[float]:
    """The best grid value and its immediate neighbors, optionally widened.

    Expansions past the ends of the grid extrapolate geometrically (x2 or
    /2 from the boundary value).
    """
    values = sorted(set(grid))
    pos = values.index(best)
    lo = max(0, pos - 1 - expansions)
    hi = min(len(values), pos + 2 + expansions)
    out = list(values[lo:hi])
    for extra in range(expansions):
        if pos - 1 - extra < 0:
            out.insert(0, out[0] / 2.0)
        if pos + 1 + extra >= len(values):
            out.append(out[-1] * 2.0)
    return sorted(set(out))


def staged_sweep(
    days: Sequence[DatasetDay],
    grids: SweepGrids,
    hyper: Hyperparameters | None = None,
    window: int = 7,
    neg_downsample: float = 1.0,
    seed: int = 0,
    n_jobs: int = 1,
) -> SweepOutcome:
    """Four-stage tuning heuristic on the first test day only.

    1. sweep the side model's L1 strength alone;
    2. sweep the shared bias strength for the order-0 factor model;
    3. sweep the shared latent strength (and order) with the bias strength
       fixed from stage 2;
    4. train the combined model on a local grid around the stage-1/3 optima
       (grid-adjacent values, expanded one step outward when the best lands
       on a boundary, at most twice), ranked by validation AUC with logloss
       as the tiebreak.
    """
    if len(days) < window + 1:
        raise ValueError(f"need at least {window + 1} days, got {len(days)}")
    base = hyper or Hyperparameters()
    train_day = merge_days(days[:window])
    if neg_downsample > 1:
        sub_seed = np.random.SeedSequence((seed, window)).generate_state(1)[0]
        train_day = downsample_day(train_day, neg_downsample, int(sub_seed))
    val_day = days[window]
    val_events = list(val_day.events)
    _, _, val_labels = event_arrays(val_events)

    def run(stage: int, family: str, hp: Hyperparameters) -> SweepRow:
        start = time.perf_counter()
        model = train_family(train_day, hp, family)
        elapsed = time.perf_counter() - start
        scores = predict_many(model, val_events)
        scored = ScoredSet(scores, val_labels)
        return SweepRow(
            stage,
            family,
            hp.order,
            hp.latent_penalty,
            hp.lambda_lr,
            hp.lambda_bias,
            hp.lambda_latent,
            auc(scored),
            logloss(scored),
            elapsed,
        )

    def run_all(jobs) -> list[SweepRow]:
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                return list(pool.map(lambda args: run(*args), jobs))
        return [run(*args) for args in jobs]

    def best_of(rows: Sequence[SweepRow]) -> SweepRow:
        return min(rows, key=lambda r: (-r.val_auc, r.val_logloss))

    rows: list[SweepRow] = []

    stage1 = run_all(
        [(1, "lr", replace(base, lambda_lr=lam)) for lam in grids.lambda_lr]
    )
    rows.extend(stage1)
    best_lr = best_of(stage1).lambda_lr

    stage2 = run_all(
        [(2, "lfl", replace(base, order=0, lambda_bias=lam)) for lam in grids.lambda_bias]
    )
    rows.extend(stage2)
    best_bias = best_of(stage2).lambda_bias

    stage3 = run_all(
        [
            (3, "lfl", replace(base, order=k, lambda_bias=best_bias, lambda_latent=lam))
            for k in grids.orders
            for lam in grids.lambda_latent
        ]
    )
    rows.extend(stage3)
    stage3_best = best_of(stage3)
    best_latent = stage3_best.lambda_latent

    stage4_cache: dict[tuple, SweepRow] = {}
    expansions = 0
    while True:
        lr_values = _neighborhood(grids.lambda_lr, best_lr, expansions)
        latent_values = _neighborhood(grids.lambda_latent, best_latent, expansions)
        pending = [
            (k, lam_lr, lam_ab)
            for k in grids.orders
            for lam_lr in lr_values
            for lam_ab in latent_values
            if (k, lam_lr, lam_ab) not in stage4_cache
        ]
        new_rows = run_all(
            [
                (
                    4,
                    "lr+lfl",
                    replace(
                        base,
                        order=k,
                        lambda_lr=lam_lr,
                        lambda_bias=best_bias,
                        lambda_latent=lam_ab,
                    ),
                )
                for k, lam_lr, lam_ab in pending
            ]
        )
        stage4_cache.update(zip(pending, new_rows))
        winner = best_of(list(stage4_cache.values()))
        on_boundary = winner.lambda_lr in (min(lr_values), max(lr_values)) or (
            winner.lambda_latent in (min(latent_values), max(latent_values))
        )
        multi_point = len(lr_values) > 1 or len(latent_values) > 1
        if on_boundary and multi_point and expansions < 2:
            expansions += 1
            continue
        rows.extend(stage4_cache.values())
        break

    best_hyper = replace(
        base,
        order=winner.order,
        lambda_lr=winner.lambda_lr,
        lambda_bias=best_bias,
        lambda_latent=winner.lambda_latent,
    )
    return SweepOutcome(tuple(rows), best_hyper, "lr+lfl")


SWEEP_COLUMNS = [
    "stage",
    "family",
    "k",
    "penalty",
    "lambda_lr",
    "lambda_bias",
    "lambda_latent",
    "val_auc",
    "val_logloss",
    "train_seconds",
]


def write_sweep_csv(path, outcome: SweepOutcome):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in outcome.rows:
            writer.writerow(
                [
                    row.stage,
                    row.family,
                    row.order,
                    row.penalty,
                    repr(float(row.lambda_lr)),
                    repr(float(row.lambda_bias)),
                    repr(float(row.lambda_latent)),
                    repr(float(row.val_auc)),
                    repr(float(row.val_logloss)),
                    f"{row.train_seconds:.3f}",
                ]
            )
