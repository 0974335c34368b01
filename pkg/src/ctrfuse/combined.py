"""Fused latent + side-information model and its alternating trainer.

The fused prediction is a single sigmoid over summed log-odds:
``sigma(alpha_i . beta_j + w.x + intercept + correction)``. Training
alternates between fitting the factors with the side model's per-dyad
predictions held fixed as offsets, and refitting the side model with the
per-event latent log-odds held fixed, so each component learns the residual
the other leaves unexplained.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass
import math

import numpy as np

from . import factorization, sidemodel
from .core import DyadKey, EventRecord, Hyperparameters, LatentFactors, SideModel, SparseFeatureVector
from .factorization import FactorizationProblem, OffsetTable
from .ingest import DatasetDay, event_arrays, group_by_dyad
from .numerics import logit, sigmoid
from .sidemodel import SideProblem


@dataclass(frozen=True)
class TrainingInfo:
    """How a model was produced; carried along for serialization."""

    alternations_run: int = 0
    day_trained: int = -1


@dataclass(frozen=True)
class CombinedModel:
    """Fitted factors (absent for side-only models) plus the side model."""

    factors: LatentFactors | None
    side: SideModel
    order: int
    info: TrainingInfo = TrainingInfo()


def predict(model: CombinedModel, key: DyadKey, x: SparseFeatureVector) -> float:
    """Fused click probability for one observation.

    A banner or domain index outside the trained range contributes exactly
    zero latent log-odds, so the prediction falls back to the side model.
    """
    z_latent = 0.0
    f = model.factors
    if f is not None and 0 <= key.banner_index < f.n_banners and 0 <= key.domain_index < f.n_domains:
        z_latent = float(f.banner[key.banner_index] @ f.domain[key.domain_index])
    return sigmoid(z_latent + sidemodel.side_logodds(model.side, x))


def predict_many(model: CombinedModel, events: Sequence[EventRecord]) -> np.ndarray:
    """Vectorized fused predictions for a list of events."""
    if not events:
        return np.zeros(0)
    bi, dj, _ = event_arrays(events)
    z = np.zeros(len(events))
    if model.factors is not None:
        z = factorization.latent_logodds(model.factors, bi, dj)
    x = sidemodel.features_matrix(events, model.side.dim)
    z = z + x @ model.side.weights + model.side.intercept + model.side.intercept_correction
    return sigmoid(z)


def _base_rate(day: DatasetDay) -> float:
    views = sum(agg.views for agg in day.aggregates)
    clicks = sum(agg.clicks for agg in day.aggregates)
    if views == 0:
        return 0.5
    return min(max(clicks / views, 1e-9), 1.0 - 1e-9)


def _feature_dim(events: Sequence[EventRecord]) -> int:
    return max((ev.features.dim for ev in events), default=0)


def extend_factors(
    factors: LatentFactors, n_banners: int, n_domains: int, rng: np.random.Generator
) -> LatentFactors:
    """Grow the factor matrices to cover new entities, tiny-initialized."""
    if factors.n_banners >= n_banners and factors.n_domains >= n_domains:
        return factors
    grown = LatentFactors.random_init(
        factors.order,
        max(n_banners, factors.n_banners),
        max(n_domains, factors.n_domains),
        rng,
    )
    a = grown.banner.copy()
    b = grown.domain.copy()
    a[: factors.n_banners] = factors.banner
    b[: factors.n_domains] = factors.domain
    return LatentFactors(factors.order, a, b)


def _extend_side(side: SideModel, dim: int) -> SideModel:
    if side.dim >= dim:
        return side
    w = np.zeros(dim)
    w[: side.dim] = side.weights
    return SideModel(w, side.intercept, side.intercept_correction)


def train_alternating(
    data: DatasetDay,
    hyper: Hyperparameters,
    init: CombinedModel | None = None,
    alternations: int | None = None,
    on_round: Callable[[int, CombinedModel], None] | None = None,
) -> CombinedModel:
    """Alternating residual fit of the latent factors and the side model.

    Each round (a) converts the current side model into per-dyad log-odds
    offsets, (b) fits the factors against them, (c) computes per-event latent
    log-odds, and (d) refits the side model against those. The very first
    round of a cold start uses a uniform base-rate offset since there is no
    side model yet. Warm starts (``init`` given) default to a single round.

    The down-sampling intercept correction is attached to the returned model
    (from ``data.neg_keep_rate``); fitting itself runs in the sampled space.
    """
    if not data.events:
        raise ValueError("cannot train on an empty day")
    rng = np.random.default_rng(hyper.optimizer.seed)
    events = list(data.events)
    bi, dj, _ = event_arrays(events)
    n_banners = int(bi.max()) + 1
    n_domains = int(dj.max()) + 1
    dim = _feature_dim(events)
    correction = math.log(data.neg_keep_rate)

    if init is None:
        n_rounds = hyper.alternations if alternations is None else alternations
        factors = LatentFactors.random_init(hyper.order, n_banners, n_domains, rng)
        side = SideModel.zeros(dim)
        fresh = True
    else:
        if init.factors is None or init.order != hyper.order:
            raise ValueError("warm start requires a combined model of matching order")
        n_rounds = 1 if alternations is None else alternations
        factors = extend_factors(init.factors, n_banners, n_domains, rng)
        side = _extend_side(init.side, dim)
        side = SideModel(side.weights, side.intercept, 0.0)
        fresh = False

    groups = group_by_dyad(events)
    base_offset = logit(_base_rate(data))
    keys = list(groups)

    model = None
    for round_idx in range(n_rounds):
        if fresh and round_idx == 0:
            offsets = OffsetTable.uniform(keys, base_offset)
        else:
            offsets = sidemodel.dyad_avg_prediction(side, groups)
        problem = FactorizationProblem(data.aggregates, offsets, hyper)
        factors = factorization.fit(problem, factors)
        ev_off = factorization.event_offsets(factors, events)
        side_problem = SideProblem(events, ev_off, hyper.lambda_lr, hyper.optimizer)
        side = sidemodel.fit_lr(side_problem, side)
        model = CombinedModel(
            factors,
            SideModel(side.weights, side.intercept, correction),
            hyper.order,
            TrainingInfo(round_idx + 1, data.day),
        )
        if on_round is not None:
            on_round(round_idx + 1, model)
    return model


def evaluate_alternation_trace(
    data: DatasetDay,
    hyper: Hyperparameters,
    val_events: Sequence[EventRecord] | None = None,
) -> list[tuple[int, float, float]]:
    """Per-alternation validation metrics (round, AUC, logloss).

    When no validation events are supplied the last 10% of the day's events
    are held out chronologically and the model trains on the rest.
    """
    from .metrics import ScoredSet, auc, logloss

    events = list(data.events)
    if val_events is None:
        cut = max(1, int(len(events) * 0.9))
        if cut >= len(events):
            raise ValueError("not enough events to carve a validation split")
        val_events = events[cut:]
        data = DatasetDay.from_events(
            data.day, events[:cut], data.downsample_factor, data.neg_keep_rate
        )
    labels = np.fromiter((ev.label for ev in val_events), dtype=np.float64, count=len(val_events))
    trace: list[tuple[int, float, float]] = []

    def record(round_idx: int, model: CombinedModel):
        scores = predict_many(model, val_events)
        scored = ScoredSet(scores, labels)
        trace.append((round_idx, auc(scored), logloss(scored)))

    train_alternating(data, hyper, on_round=record)
    return trace
