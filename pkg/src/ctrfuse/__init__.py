"""Dyadic CTR prediction fusing latent factors with a sparse logistic side
model: data ingestion, confidence-weighted factorization, alternating
residual fitting, evaluation metrics and a sequential experiment pipeline.
"""

from .combined import CombinedModel, evaluate_alternation_trace, predict, train_alternating
from .core import (
    DyadAggregate,
    DyadKey,
    EventRecord,
    Hyperparameters,
    LatentFactors,
    OptimizerSettings,
    SideModel,
    SparseFeatureVector,
    empirical_ctr,
)
from .factorization import (
    FactorizationProblem,
    OffsetTable,
    fit,
    grad_cwf,
    loss_cwf,
    predict_mf,
)
from .ingest import (
    DatasetDay,
    Vocabularies,
    Vocabulary,
    aggregate,
    build_vocabularies,
    downsample_negatives,
    encode,
    group_by_dyad,
    parse_log,
)
from .metrics import (
    MetricsReport,
    ScoredSet,
    auc,
    bootstrap_median_ci,
    logloss,
    per_banner_daily,
    relative_report,
)
from .pipeline import SweepGrids, run_sequential, staged_sweep, train_family
from .sidemodel import SideProblem, dyad_avg_prediction, fit_lr, intercept_correction, predict_lr
from .synth import GeneratorConfig, generate

__version__ = "0.1.0"

__all__ = [
    "CombinedModel",
    "DatasetDay",
    "DyadAggregate",
    "DyadKey",
    "EventRecord",
    "FactorizationProblem",
    "GeneratorConfig",
    "Hyperparameters",
    "LatentFactors",
    "MetricsReport",
    "OffsetTable",
    "OptimizerSettings",
    "ScoredSet",
    "SideModel",
    "SideProblem",
    "SparseFeatureVector",
    "SweepGrids",
    "Vocabularies",
    "Vocabulary",
    "aggregate",
    "auc",
    "bootstrap_median_ci",
    "build_vocabularies",
    "downsample_negatives",
    "dyad_avg_prediction",
    "empirical_ctr",
    "encode",
    "evaluate_alternation_trace",
    "fit",
    "fit_lr",
    "generate",
    "grad_cwf",
    "group_by_dyad",
    "intercept_correction",
    "logloss",
    "loss_cwf",
    "parse_log",
    "per_banner_daily",
    "predict",
    "predict_lr",
    "predict_mf",
    "relative_report",
    "run_sequential",
    "staged_sweep",
    "train_alternating",
    "train_family",
]
