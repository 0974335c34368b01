"""Core value types shared across the package.

Everything here is immutable after construction and safe to share between
threads. Index spaces (banner, domain, feature) are dense integers assigned
by the ingest vocabularies.
"""

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass(frozen=True, slots=True)
class DyadKey:
    """A (banner, domain) pair identified by dense indices."""

    banner_index: int
    domain_index: int


@dataclass(frozen=True, slots=True)
class DyadAggregate:
    """Click/view counts for one observed dyad.

    Only observed dyads are ever represented; "no data" is expressed by the
    absence of an aggregate, never by ``views == 0``.
    """

    key: DyadKey
    clicks: int
    views: int

    def __post_init__(self):
        if self.views <= 0:
            raise ValueError(f"aggregate for {self.key} must have views > 0")
        if self.clicks < 0 or self.clicks > self.views:
            raise ValueError(
                f"aggregate for {self.key} needs 0 <= clicks <= views, "
                f"got clicks={self.clicks} views={self.views}"
            )


def empirical_ctr(agg: DyadAggregate) -> float:
    """Observed click-through rate clicks/views of one dyad."""
    return agg.clicks / agg.views


@dataclass(frozen=True, slots=True)
class SparseFeatureVector:
    """Sparse feature vector with strictly increasing indices below ``dim``."""

    indices: tuple[int, ...]
    values: tuple[float, ...]
    dim: int

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values must have equal length")
        prev = -1
        for i in self.indices:
            if i <= prev:
                raise ValueError("feature indices must be strictly increasing")
            prev = i
        if prev >= self.dim:
            raise ValueError(f"feature index {prev} out of range for dim {self.dim}")
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError("feature values must be finite")

    @classmethod
    def empty(cls, dim: int) -> "SparseFeatureVector":
        return cls((), (), dim)


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One impression: day, dyad, binary click label and explicit features."""

    day: int
    key: DyadKey
    label: int
    features: SparseFeatureVector

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class LatentFactors:
    """Bias-augmented factor matrices for banners and domains.

    A model of order ``K`` stores rows of length ``K + 2``:

    * banner row i:  ``[latent_1..latent_K, bias_i, 1]``
    * domain row j:  ``[latent_1..latent_K, 1, bias_j]``

    so the row/column inner product is ``sum_k latent.latent + bias_i +
    bias_j``. The constant-1 slots are fixed by construction and are never
    touched by optimization or regularization.
    """

    order: int
    banner: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        k = self.order
        if k < 0:
            raise ValueError("order must be >= 0")
        banner = np.ascontiguousarray(self.banner, dtype=np.float64)
        domain = np.ascontiguousarray(self.domain, dtype=np.float64)
        if banner.ndim != 2 or banner.shape[1] != k + 2:
            raise ValueError(f"banner matrix must have {k + 2} columns")
        if domain.ndim != 2 or domain.shape[1] != k + 2:
            raise ValueError(f"domain matrix must have {k + 2} columns")
        if not (np.isfinite(banner).all() and np.isfinite(domain).all()):
            raise ValueError("factor entries must be finite")
        if banner.shape[0] and not (banner[:, k + 1] == 1.0).all():
            raise ValueError("banner constant slot (last column) must be 1")
        if domain.shape[0] and not (domain[:, k] == 1.0).all():
            raise ValueError(f"domain constant slot (column {k}) must be 1")
        banner.flags.writeable = False
        domain.flags.writeable = False
        object.__setattr__(self, "banner", banner)
        object.__setattr__(self, "domain", domain)

    @property
    def n_banners(self) -> int:
        return self.banner.shape[0]

    @property
    def n_domains(self) -> int:
        return self.domain.shape[0]

    # column layout helpers
    @property
    def banner_bias_col(self) -> int:
        return self.order

    @property
    def domain_bias_col(self) -> int:
        return self.order + 1

    @classmethod
    def zeros(cls, order: int, n_banners: int, n_domains: int) -> "LatentFactors":
        a = np.zeros((n_banners, order + 2))
        b = np.zeros((n_domains, order + 2))
        a[:, order + 1] = 1.0
        b[:, order] = 1.0
        return cls(order, a, b)

    @classmethod
    def random_init(
        cls,
        order: int,
        n_banners: int,
        n_domains: int,
        rng: np.random.Generator,
        scale: float = 0.01,
    ) -> "LatentFactors":
        """Symmetric tiny init: latents uniform in +-scale/sqrt(K), biases 0."""
        a = np.zeros((n_banners, order + 2))
        b = np.zeros((n_domains, order + 2))
        if order > 0:
            spread = scale / math.sqrt(order)
            a[:, :order] = rng.uniform(-spread, spread, size=(n_banners, order))
            b[:, :order] = rng.uniform(-spread, spread, size=(n_domains, order))
        a[:, order + 1] = 1.0
        b[:, order] = 1.0
        return cls(order, a, b)


@dataclass(frozen=True)
class SideModel:
    """Logistic weights over explicit features plus an unpenalized intercept.

    ``intercept_correction`` is the additive log-odds adjustment that undoes
    negative down-sampling; it is 0 when no down-sampling was used and is
    added at prediction time, never during fitting.
    """

    weights: np.ndarray
    intercept: float = 0.0
    intercept_correction: float = 0.0

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("weights must be a 1-d array")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        if not (math.isfinite(self.intercept) and math.isfinite(self.intercept_correction)):
            raise ValueError("intercept terms must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "SideModel":
        return cls(np.zeros(dim), 0.0, 0.0)


@dataclass(frozen=True)
class OptimizerSettings:
    """Gradient-descent knobs shared by the factor and side-model fits.

    ``batch_size=None`` selects deterministic full-batch descent with
    backtracking line search; an integer selects mini-batch SGD with
    inverse-time step decay ``step_size / (1 + step_decay * epoch)``.
    """

    step_size: float = 0.5
    epochs: int = 200
    batch_size: int | None = 256
    tol: float = 1e-8
    step_decay: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.step_decay < 0:
            raise ValueError("step_decay must be >= 0")


@dataclass(frozen=True)
class Hyperparameters:
    """Regularization strengths and model order.

    The bias slots of both factor matrices share ``lambda_bias`` and the
    latent slots share ``lambda_latent``; the side model's weights use
    ``lambda_lr``. Constant-1 slots and the side-model intercept are never
    penalized.
    """

    lambda_lr: float = 4.0
    lambda_bias: float = 3.0
    lambda_latent: float = 1.0
    latent_penalty: str = "l2"
    order: int = 0
    alternations: int = 7
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        for name in ("lambda_lr", "lambda_bias", "lambda_latent"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.latent_penalty not in ("l1", "l2"):
            raise ValueError("latent_penalty must be 'l1' or 'l2'")
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.alternations < 1:
            raise ValueError("alternations must be >= 1")
