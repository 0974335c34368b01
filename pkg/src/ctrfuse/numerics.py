"""Numerically stable logistic primitives and small optimizer helpers."""

import numpy as np

# probabilities are clamped to this range inside logs only, never in predictions
PROB_FLOOR = 1e-12


class NumericalError(RuntimeError):
    """A loss or gradient evaluation produced a non-finite value."""


class DivergenceError(NumericalError):
    """Optimization diverged; retry with a smaller step size."""


def sigmoid(z):
    """Logistic function with the overflow-free branch for negative inputs.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    arr = np.asarray(z, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ez = np.exp(arr[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if scalar else out


def logit(p):
    """Inverse of :func:`sigmoid`: log(p) - log(1 - p)."""
    arr = np.asarray(p, dtype=np.float64)
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if arr.ndim == 0 else out


def clamped_nll(p, pos_count, neg_count):
    """Per-element -(pos*log p + neg*log(1-p)) with p clamped away from {0,1}."""
    pc = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -(pos_count * np.log(pc) + neg_count * np.log1p(-pc))


def soft_threshold(x, threshold):
    """L1 proximal map: shrink toward zero, clipping exactly at zero."""
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def inverse_time_step(step_size: float, decay: float, epoch: int) -> float:
    return step_size / (1.0 + decay * epoch)


class CumulativeL1Clipper:
    """Lazy cumulative-penalty handling of an L1 term during SGD.

    Tracks the total penalty each coordinate should have received (``u``,
    scalar or per-column) against what it actually received (``q``) and clips
    weights toward zero by the outstanding difference whenever they are
    touched. Weights are clipped at zero, never pushed through it, so exact
    zeros are representable.
    """

    def __init__(self, shape, per_column: bool = False):
        self.u = np.zeros(shape[-1]) if per_column else 0.0
        self.q = np.zeros(shape)

    def accumulate(self, amount):
        self.u = self.u + amount

    def _clip(self, block, pending, q):
        shrunk = np.where(
            block > 0,
            np.maximum(0.0, block - (pending + q)),
            np.minimum(0.0, block + (pending - q)),
        )
        return np.where(block == 0.0, 0.0, shrunk)

    def clip_rows(self, w: np.ndarray, rows, cols):
        """Apply pending penalty to a (rows x cols) block of a matrix."""
        sel = np.ix_(np.atleast_1d(rows), np.atleast_1d(cols))
        block = w[sel]
        q = self.q[sel]
        pending = self.u[np.atleast_1d(cols)] if np.ndim(self.u) else self.u
        new = self._clip(block, pending, q)
        w[sel] = new
        self.q[sel] = q + (new - block)

    def clip_indices(self, w: np.ndarray, idx):
        """Apply pending penalty to selected coordinates of a vector."""
        block = w[idx]
        q = self.q[idx]
        new = self._clip(block, self.u, q)
        w[idx] = new
        self.q[idx] = q + (new - block)
