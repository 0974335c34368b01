"""Confidence-weighted logistic factorization over dyad aggregates.

The log-odds of a dyad is the inner product of its bias-augmented factor
rows plus an optional fixed offset (used to hold the side model's
predictions constant during alternating fits). The loss weights each dyad's
log-likelihood by its click and non-click counts instead of iterating raw
events, which is equivalent but far cheaper when dyads repeat.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import math

import numpy as np

from .core import DyadAggregate, DyadKey, Hyperparameters, LatentFactors
from .numerics import (
    CumulativeL1Clipper,
    DivergenceError,
    NumericalError,
    clamped_nll,
    inverse_time_step,
    sigmoid,
    soft_threshold,
)


class OffsetTable:
    """Fixed per-dyad log-odds offsets; absent keys contribute exactly 0."""

    __slots__ = ("_table",)

    def __init__(self, table: Mapping[DyadKey, float] | None = None):
        self._table = dict(table) if table else {}
        for key, value in self._table.items():
            if not math.isfinite(value):
                raise ValueError(f"offset for {key} must be finite")

    @classmethod
    def uniform(cls, keys, value: float) -> "OffsetTable":
        return cls({key: value for key in keys})

    def get(self, key: DyadKey) -> float:
        return self._table.get(key, 0.0)

    def items(self):
        return self._table.items()

    def __len__(self) -> int:
        return len(self._table)


@dataclass(frozen=True)
class FactorizationProblem:
    """A set of dyad aggregates, fixed offsets and hyperparameters to fit."""

    aggregates: tuple[DyadAggregate, ...]
    offsets: OffsetTable = field(default_factory=OffsetTable)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def __post_init__(self):
        object.__setattr__(self, "aggregates", tuple(self.aggregates))

    def arrays(self, n_banners: int, n_domains: int):
        """Dense (banner, domain, clicks, views, offset) arrays, range checked."""
        n = len(self.aggregates)
        bi = np.empty(n, dtype=np.int64)
        dj = np.empty(n, dtype=np.int64)
        clicks = np.empty(n, dtype=np.float64)
        views = np.empty(n, dtype=np.float64)
        off = np.empty(n, dtype=np.float64)
        for idx, agg in enumerate(self.aggregates):
            key = agg.key
            if not (0 <= key.banner_index < n_banners and 0 <= key.domain_index < n_domains):
                raise ValueError(
                    f"aggregate key {key} outside [0,{n_banners}) x [0,{n_domains})"
                )
            bi[idx] = key.banner_index
            dj[idx] = key.domain_index
            clicks[idx] = agg.clicks
            views[idx] = agg.views
            off[idx] = self.offsets.get(key)
        return bi, dj, clicks, views, off


def latent_logodds(factors: LatentFactors, bi, dj) -> np.ndarray:
    """Row/column inner products; out-of-range indices contribute exactly 0."""
    bi = np.asarray(bi, dtype=np.int64)
    dj = np.asarray(dj, dtype=np.int64)
    valid = (bi >= 0) & (bi < factors.n_banners) & (dj >= 0) & (dj < factors.n_domains)
    z = np.zeros(bi.shape, dtype=np.float64)
    if valid.any():
        z[valid] = np.einsum(
            "ij,ij->i", factors.banner[bi[valid]], factors.domain[dj[valid]]
        )
    return z


def predict_mf(factors: LatentFactors, key: DyadKey, offset: float = 0.0) -> float:
    """Click probability sigma(alpha_i . beta_j + offset) for one dyad."""
    z = float(factors.banner[key.banner_index] @ factors.domain[key.domain_index])
    return sigmoid(z + offset)


def _penalty_columns(order: int, hyper: Hyperparameters):
    """Per-column penalty weights for each matrix; constant slots get 0."""
    lam_a = np.zeros(order + 2)
    lam_b = np.zeros(order + 2)
    lam_a[:order] = hyper.lambda_latent
    lam_b[:order] = hyper.lambda_latent
    lam_a[order] = hyper.lambda_bias  # banner bias column
    lam_b[order + 1] = hyper.lambda_bias  # domain bias column
    return lam_a, lam_b


def loss_cwf(problem: FactorizationProblem, factors: LatentFactors) -> float:
    """Regularized confidence-weighted negative log-likelihood.

    Sums ``-(C_ij log p_ij + (V_ij - C_ij) log(1 - p_ij))`` over observed
    dyads with ``p_ij = sigma(alpha_i . beta_j + offset_ij)``, plus the L1 or
    L2 penalty on latent and bias slots (never on the constant-1 slots).
    """
    bi, dj, clicks, views, off = problem.arrays(factors.n_banners, factors.n_domains)
    z = latent_logodds(factors, bi, dj) + off
    terms = clamped_nll(sigmoid(z), clicks, views - clicks)
    bad = ~np.isfinite(terms)
    if bad.any():
        key = problem.aggregates[int(np.argmax(bad))].key
        raise NumericalError(f"non-finite loss term for dyad {key}")
    lam_a, lam_b = _penalty_columns(factors.order, problem.hyper)
    if problem.hyper.latent_penalty == "l2":
        reg = (lam_a * np.square(factors.banner)).sum() + (
            lam_b * np.square(factors.domain)
        ).sum()
    else:
        reg = (lam_a * np.abs(factors.banner)).sum() + (
            lam_b * np.abs(factors.domain)
        ).sum()
    return float(terms.sum()) + float(reg)


def grad_cwf(
    problem: FactorizationProblem, factors: LatentFactors
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the smooth part of the objective wrt both factor matrices.

    The data term contributes ``sum_j (V_ij p_ij - C_ij) beta_j`` per banner
    row (and symmetrically per domain row). Under L2 the ridge gradient is
    included; under L1 the penalty is non-smooth and left to the optimizer.
    Constant-1 slots always carry an exact zero gradient.
    """
    bi, dj, clicks, views, off = problem.arrays(factors.n_banners, factors.n_domains)
    z = latent_logodds(factors, bi, dj) + off
    resid = views * sigmoid(z) - clicks
    ga = np.zeros_like(factors.banner)
    gb = np.zeros_like(factors.domain)
    np.add.at(ga, bi, resid[:, None] * factors.domain[dj])
    np.add.at(gb, dj, resid[:, None] * factors.banner[bi])
    if problem.hyper.latent_penalty == "l2":
        lam_a, lam_b = _penalty_columns(factors.order, problem.hyper)
        ga += 2.0 * lam_a * factors.banner
        gb += 2.0 * lam_b * factors.domain
    k = factors.order
    ga[:, k + 1] = 0.0
    gb[:, k] = 0.0
    return ga, gb


def _data_loss(a, b, bi, dj, clicks, views, off):
    z = np.einsum("ij,ij->i", a[bi], b[dj]) + off
    return float(clamped_nll(sigmoid(z), clicks, views - clicks).sum())


def _fit_batch(a, b, bi, dj, clicks, views, off, hyper, update_a, update_b, history):
    """Deterministic descent with backtracking; monotone in the full objective.

    L2 uses plain gradient steps under an Armijo condition; L1 uses proximal
    steps accepted under the standard quadratic upper-bound test. Either way
    the full loss never increases across epochs. The fixed side's (constant)
    penalty is dropped from the internal objective.
    """
    settings = hyper.optimizer
    scale = 1.0 / max(views.sum(), 1.0)
    l1 = hyper.latent_penalty == "l1"
    k = hyper.order
    lam_a, lam_b = _penalty_columns(k, hyper)
    if not update_a:
        lam_a = np.zeros_like(lam_a)
    if not update_b:
        lam_b = np.zeros_like(lam_b)

    def smooth(a_, b_):
        val = scale * _data_loss(a_, b_, bi, dj, clicks, views, off)
        if not l1:
            val += scale * float(
                (lam_a * np.square(a_)).sum() + (lam_b * np.square(b_)).sum()
            )
        return val

    def full(a_, b_):
        val = smooth(a_, b_)
        if l1:
            val += scale * float(
                (lam_a * np.abs(a_)).sum() + (lam_b * np.abs(b_)).sum()
            )
        return val

    step = settings.step_size
    current = full(a, b)
    if not math.isfinite(current):
        raise DivergenceError("initial loss is not finite; check inputs")
    if history is not None:
        history.append(current / scale)
    for _ in range(settings.epochs):
        z = np.einsum("ij,ij->i", a[bi], b[dj]) + off
        resid = scale * (views * sigmoid(z) - clicks)
        ga = np.zeros_like(a)
        gb = np.zeros_like(b)
        if update_a:
            np.add.at(ga, bi, resid[:, None] * b[dj])
            if not l1:
                ga += scale * 2.0 * lam_a * a
            ga[:, k + 1] = 0.0
        if update_b:
            np.add.at(gb, dj, resid[:, None] * a[bi])
            if not l1:
                gb += scale * 2.0 * lam_b * b
            gb[:, k] = 0.0
        gsq = float((ga * ga).sum() + (gb * gb).sum())
        if gsq == 0.0:
            break
        smooth_here = smooth(a, b)
        accepted = False
        while step > 1e-20:
            if l1:
                a1 = soft_threshold(a - step * ga, step * scale * lam_a) if update_a else a
                b1 = soft_threshold(b - step * gb, step * scale * lam_b) if update_b else b
                diff = float(((a1 - a) ** 2).sum() + ((b1 - b) ** 2).sum())
                bound = (
                    smooth_here
                    + float((ga * (a1 - a)).sum() + (gb * (b1 - b)).sum())
                    + diff / (2.0 * step)
                )
                if smooth(a1, b1) <= bound + 1e-15:
                    accepted = True
                    break
            else:
                a1 = a - step * ga if update_a else a
                b1 = b - step * gb if update_b else b
                if smooth(a1, b1) <= smooth_here - 1e-4 * step * gsq:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        a, b = a1, b1
        new = full(a, b)
        if not math.isfinite(new):
            raise DivergenceError("loss diverged; use a smaller step size")
        if history is not None:
            history.append(new / scale)
        rel = (current - new) / max(abs(current), 1e-300)
        current = new
        if 0 <= rel < settings.tol:
            break
        step = min(step * 2.0, 1e8)  # recover from earlier backtracking
    return a, b


def _fit_sgd(a, b, bi, dj, clicks, views, off, hyper, update_a, update_b, history):
    """Mini-batch SGD over dyads with inverse-time step decay.

    L2 is applied as a per-update global shrink; L1 via lazy cumulative
    penalty clipping on touched rows with a final catch-up pass. Tracks the
    best full loss seen and returns that snapshot, so the returned factors
    never lose to the initial ones.
    """
    settings = hyper.optimizer
    rng = np.random.default_rng(settings.seed)
    n = bi.shape[0]
    scale = 1.0 / max(views.sum(), 1.0)
    l1 = hyper.latent_penalty == "l1"
    k = hyper.order
    lam_a, lam_b = _penalty_columns(k, hyper)
    if not update_a:
        lam_a = np.zeros_like(lam_a)
    if not update_b:
        lam_b = np.zeros_like(lam_b)
    free_a = np.nonzero(lam_a > 0)[0]
    free_b = np.nonzero(lam_b > 0)[0]
    clip_a = CumulativeL1Clipper(a.shape, per_column=True) if l1 else None
    clip_b = CumulativeL1Clipper(b.shape, per_column=True) if l1 else None

    def full_loss():
        val = scale * _data_loss(a, b, bi, dj, clicks, views, off)
        if l1:
            val += scale * float((lam_a * np.abs(a)).sum() + (lam_b * np.abs(b)).sum())
        else:
            val += scale * float(
                (lam_a * np.square(a)).sum() + (lam_b * np.square(b)).sum()
            )
        return val

    best = full_loss()
    if history is not None:
        history.append(best / scale)
    best_a, best_b = a.copy(), b.copy()
    prev = best
    batch = min(settings.batch_size, n) if n else 0
    for epoch in range(settings.epochs):
        if batch == 0:
            break
        eta = inverse_time_step(settings.step_size, settings.step_decay, epoch)
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            rows = perm[start : start + batch]
            boost = n / rows.shape[0]
            zb = np.einsum("ij,ij->i", a[bi[rows]], b[dj[rows]]) + off[rows]
            resid = eta * scale * boost * (views[rows] * sigmoid(zb) - clicks[rows])
            if update_a:
                delta = resid[:, None] * b[dj[rows]]
                delta[:, k + 1] = 0.0
                if l1:
                    np.subtract.at(a, bi[rows], delta)
                    clip_a.accumulate(eta * scale * lam_a)
                    if free_a.size:
                        clip_a.clip_rows(a, np.unique(bi[rows]), free_a)
                else:
                    a *= 1.0 - eta * scale * 2.0 * lam_a
                    np.subtract.at(a, bi[rows], delta)
                    a[:, k + 1] = 1.0
            if update_b:
                delta = resid[:, None] * a[bi[rows]]
                delta[:, k] = 0.0
                if l1:
                    np.subtract.at(b, dj[rows], delta)
                    clip_b.accumulate(eta * scale * lam_b)
                    if free_b.size:
                        clip_b.clip_rows(b, np.unique(dj[rows]), free_b)
                else:
                    b *= 1.0 - eta * scale * 2.0 * lam_b
                    np.subtract.at(b, dj[rows], delta)
                    b[:, k] = 1.0
        loss = full_loss()
        if not math.isfinite(loss):
            raise DivergenceError("loss diverged; use a smaller step size")
        if history is not None:
            history.append(loss / scale)
        if loss < best:
            best, best_a, best_b = loss, a.copy(), b.copy()
        rel = (prev - loss) / max(abs(prev), 1e-300)
        prev = loss
        if 0 <= rel < settings.tol:
            break
    if l1 and n:
        if update_a and free_a.size:
            clip_a.clip_rows(a, np.arange(a.shape[0]), free_a)
        if update_b and free_b.size:
            clip_b.clip_rows(b, np.arange(b.shape[0]), free_b)
        loss = full_loss()
        if loss <= best:
            best_a, best_b = a.copy(), b.copy()
    return best_a, best_b


def fit(
    problem: FactorizationProblem,
    init: LatentFactors,
    fixed_side: str = "none",
    loss_history: list | None = None,
) -> LatentFactors:
    """Fit the factor matrices, optionally holding one side fixed.

    ``fixed_side`` is ``"rows"`` (banner matrix unchanged), ``"cols"``
    (domain matrix unchanged) or ``"none"``. Full-batch mode
    (``optimizer.batch_size is None``) is deterministic and monotone in the
    full loss; the SGD mode returns the best full-loss snapshot seen, so the
    result never loses to the init on the full loss. The constant-1 slots are
    never modified.

    ``loss_history``, when given, receives the optimizer's full objective
    (data plus penalty on the matrices being updated) once per epoch,
    starting with the initial value.
    """
    if fixed_side not in ("rows", "cols", "none"):
        raise ValueError("fixed_side must be 'rows', 'cols' or 'none'")
    if init.order != problem.hyper.order:
        raise ValueError(
            f"init order {init.order} does not match hyper order {problem.hyper.order}"
        )
    bi, dj, clicks, views, off = problem.arrays(init.n_banners, init.n_domains)
    a = init.banner.copy()
    b = init.domain.copy()
    update_a = fixed_side != "rows"
    update_b = fixed_side != "cols"
    runner = _fit_batch if problem.hyper.optimizer.batch_size is None else _fit_sgd
    a, b = runner(
        a, b, bi, dj, clicks, views, off, problem.hyper, update_a, update_b, loss_history
    )
    if not update_a:
        a = init.banner
    if not update_b:
        b = init.domain
    return LatentFactors(init.order, a, b)


def event_offsets(factors: LatentFactors, events: Sequence) -> np.ndarray:
    """Per-event latent log-odds, for residual-fitting the side model."""
    n = len(events)
    bi = np.fromiter((ev.key.banner_index for ev in events), dtype=np.int64, count=n)
    dj = np.fromiter((ev.key.domain_index for ev in events), dtype=np.int64, count=n)
    return latent_logodds(factors, bi, dj)
