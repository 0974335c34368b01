"""L1-regularized logistic regression on explicit features.

Supports fixed per-event log-odds offsets (for residual fitting against the
latent model), per-dyad averaged predictions turned into log-odds offsets,
and the additive intercept correction that undoes negative down-sampling.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp

from .core import DyadKey, EventRecord, OptimizerSettings, SideModel, SparseFeatureVector
from .ingest import event_arrays
from .numerics import (
    CumulativeL1Clipper,
    DivergenceError,
    PROB_FLOOR,
    clamped_nll,
    inverse_time_step,
    logit,
    sigmoid,
    soft_threshold,
)
from .factorization import OffsetTable


@dataclass(frozen=True)
class SideProblem:
    """Events, fixed per-event offsets and the L1 strength to fit against."""

    events: tuple[EventRecord, ...]
    event_offsets: np.ndarray
    lambda_lr: float
    optimizer: OptimizerSettings

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        off = np.ascontiguousarray(self.event_offsets, dtype=np.float64)
        if off.shape != (len(self.events),):
            raise ValueError("need exactly one offset per event")
        if not np.isfinite(off).all():
            raise ValueError("event offsets must be finite")
        object.__setattr__(self, "event_offsets", off)
        if self.lambda_lr < 0:
            raise ValueError("lambda_lr must be >= 0")


def _vectors_matrix(vectors: Sequence[SparseFeatureVector], dim: int) -> sp.csr_matrix:
    n = len(vectors)
    lens = np.fromiter((len(v.indices) for v in vectors), dtype=np.int64, count=n)
    nnz = int(lens.sum())
    indices = np.fromiter((i for v in vectors for i in v.indices), dtype=np.int32, count=nnz)
    data = np.fromiter((val for v in vectors for val in v.values), dtype=np.float64, count=nnz)
    indptr = np.concatenate(([0], np.cumsum(lens)))
    return sp.csr_matrix((data, indices, indptr), shape=(n, dim))


def features_matrix(events: Sequence[EventRecord], dim: int) -> sp.csr_matrix:
    """CSR matrix of the events' sparse feature vectors."""
    return _vectors_matrix([ev.features for ev in events], dim)


def side_logodds(model: SideModel, x: SparseFeatureVector) -> float:
    """w.x + intercept + intercept_correction for one feature vector."""
    s = model.intercept + model.intercept_correction
    for i, v in zip(x.indices, x.values):
        s += model.weights[i] * v
    return s


def predict_lr(model: SideModel, x: SparseFeatureVector, offset: float = 0.0) -> float:
    """Click probability sigma(w.x + intercept + correction + offset)."""
    return sigmoid(side_logodds(model, x) + offset)


def intercept_correction(achieved_negative_keep_rate: float) -> float:
    """Additive log-odds correction for down-sampled negatives: ln(keep rate).

    Exact for logistic models under case-control sampling; 0 when nothing was
    dropped.
    """
    if not 0.0 < achieved_negative_keep_rate <= 1.0:
        raise ValueError(
            f"keep rate must be in (0, 1], got {achieved_negative_keep_rate}"
        )
    return math.log(achieved_negative_keep_rate)


def dyad_avg_prediction(
    model: SideModel, groups: Mapping[DyadKey, Sequence[SparseFeatureVector]]
) -> OffsetTable:
    """Average predicted CTR per dyad, returned as log-odds offsets.

    For each dyad the mean of the per-observation predictions (not the mean
    of log-odds) is clamped away from {0, 1} and mapped through the logit.
    """
    keys = list(groups)
    flat: list[SparseFeatureVector] = []
    sizes = []
    for key in keys:
        vectors = groups[key]
        if len(vectors) == 0:
            raise ValueError(f"empty feature-vector group for dyad {key}")
        flat.extend(vectors)
        sizes.append(len(vectors))
    if not keys:
        return OffsetTable()
    x = _vectors_matrix(flat, model.dim)
    z = x @ model.weights + model.intercept + model.intercept_correction
    p = sigmoid(z)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    table = {}
    for pos, key in enumerate(keys):
        mean = float(p[bounds[pos] : bounds[pos + 1]].mean())
        mean = min(max(mean, PROB_FLOOR), 1.0 - PROB_FLOOR)
        table[key] = logit(mean)
    return OffsetTable(table)


def _objective(x, y, off, w, b, lam, scale, smooth_only=False):
    z = x @ w + b + off
    val = scale * float(clamped_nll(sigmoid(z), y, 1.0 - y).sum())
    if not smooth_only:
        val += scale * lam * float(np.abs(w).sum())
    return val


def loss_lr(problem: SideProblem, model: SideModel) -> float:
    """L1-penalized logistic loss over the problem's events.

    ``sum_d -(y_d log p_d + (1-y_d) log(1-p_d)) + lambda * |w|_1`` with
    ``p_d = sigma(w.x_d + intercept + offset_d)``; the intercept and the
    correction are never penalized (the correction also plays no role here,
    matching fitting).
    """
    x = features_matrix(problem.events, model.dim)
    _, _, y = event_arrays(problem.events)
    z = x @ model.weights + model.intercept + problem.event_offsets
    data = float(clamped_nll(sigmoid(z), y, 1.0 - y).sum())
    return data + problem.lambda_lr * float(np.abs(model.weights).sum())


def grad_lr(problem: SideProblem, model: SideModel) -> tuple[np.ndarray, float]:
    """Gradient of the smooth part of :func:`loss_lr` wrt (weights, intercept).

    The L1 penalty is non-smooth and left to the optimizer, mirroring the
    factor model's convention.
    """
    x = features_matrix(problem.events, model.dim)
    _, _, y = event_arrays(problem.events)
    z = x @ model.weights + model.intercept + problem.event_offsets
    resid = sigmoid(z) - y
    return x.T @ resid, float(resid.sum())


def _fit_lr_batch(x, y, off, w, b, lam, settings, history):
    """Proximal gradient with backtracking; monotone and gives exact zeros."""
    scale = 1.0 / max(x.shape[0], 1)
    xt = x.T.tocsr()

    def smooth(w_, b_):
        return _objective(x, y, off, w_, b_, lam, scale, smooth_only=True)

    step = settings.step_size
    current = _objective(x, y, off, w, b, lam, scale)
    if not math.isfinite(current):
        raise DivergenceError("initial loss is not finite; check inputs")
    if history is not None:
        history.append(current / scale)
    for _ in range(settings.epochs):
        z = x @ w + b + off
        resid = scale * (sigmoid(z) - y)
        gw = xt @ resid
        gb = float(resid.sum())
        gsq = float((gw * gw).sum() + gb * gb)
        if gsq == 0.0:
            break
        smooth_here = smooth(w, b)
        accepted = False
        while step > 1e-20:
            w1 = soft_threshold(w - step * gw, step * scale * lam)
            b1 = b - step * gb
            dw = w1 - w
            db = b1 - b
            bound = (
                smooth_here
                + float((gw * dw).sum())
                + gb * db
                + (float((dw * dw).sum()) + db * db) / (2.0 * step)
            )
            if smooth(w1, b1) <= bound + 1e-15:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        w, b = w1, b1
        new = _objective(x, y, off, w, b, lam, scale)
        if not math.isfinite(new):
            raise DivergenceError("loss diverged; use a smaller step size")
        if history is not None:
            history.append(new / scale)
        rel = (current - new) / max(abs(current), 1e-300)
        current = new
        if 0 <= rel < settings.tol:
            break
        step = min(step * 2.0, 1e8)
    return w, b


def _fit_lr_sgd(x, y, off, w, b, lam, settings, history):
    """Mini-batch SGD with inverse-time decay and cumulative L1 clipping."""
    rng = np.random.default_rng(settings.seed)
    n = x.shape[0]
    scale = 1.0 / max(n, 1)
    clipper = CumulativeL1Clipper(w.shape)

    def full_loss(w_, b_):
        return _objective(x, y, off, w_, b_, lam, scale)

    best = full_loss(w, b)
    if history is not None:
        history.append(best / scale)
    best_w, best_b = w.copy(), b
    prev = best
    batch = min(settings.batch_size, n) if n else 0
    for epoch in range(settings.epochs):
        if batch == 0:
            break
        eta = inverse_time_step(settings.step_size, settings.step_decay, epoch)
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            rows = perm[start : start + batch]
            xb = x[rows]
            zb = xb @ w + b + off[rows]
            resid = (n / rows.shape[0]) * scale * (sigmoid(zb) - y[rows])
            w -= eta * (xb.T @ resid)
            b -= eta * float(resid.sum())
            if lam > 0:
                clipper.accumulate(eta * scale * lam)
                touched = np.unique(xb.indices)
                if touched.size:
                    clipper.clip_indices(w, touched)
        loss = full_loss(w, b)
        if not math.isfinite(loss):
            raise DivergenceError("loss diverged; use a smaller step size")
        if history is not None:
            history.append(loss / scale)
        if loss < best:
            best, best_w, best_b = loss, w.copy(), b
        rel = (prev - loss) / max(abs(prev), 1e-300)
        prev = loss
        if 0 <= rel < settings.tol:
            break
    if lam > 0 and n:
        clipper.clip_indices(w, np.arange(w.shape[0]))
        loss = full_loss(w, b)
        if loss <= best:
            best_w, best_b = w.copy(), b
    return best_w, best_b


def fit_lr(
    problem: SideProblem, init: SideModel, loss_history: list | None = None
) -> SideModel:
    """Fit weights and intercept; the intercept is never penalized.

    The per-event offsets are added inside the sigmoid and held fixed. The
    L1 penalty produces exact zeros (proximal steps in full-batch mode,
    cumulative penalty clipping in SGD mode). The returned model keeps the
    init's ``intercept_correction`` untouched; the correction plays no part
    in fitting.
    """
    events = problem.events
    dim = init.dim
    for ev in events:
        if ev.features.indices and ev.features.indices[-1] >= dim:
            raise ValueError(
                f"feature index {ev.features.indices[-1]} out of range for model dim {dim}"
            )
    x = features_matrix(events, dim)
    _, _, y = event_arrays(events)
    w = init.weights.copy()
    b = init.intercept
    runner = _fit_lr_batch if problem.optimizer.batch_size is None else _fit_lr_sgd
    w, b = runner(x, y, problem.event_offsets, w, b, problem.lambda_lr, problem.optimizer, loss_history)
    return SideModel(w, float(b), init.intercept_correction)
