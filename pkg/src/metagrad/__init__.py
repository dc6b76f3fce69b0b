"""Meta-gradient estimators for policy-gradient inner loops."""

from ._validation import (
    BucketMismatch,
    ConfigError,
    DegenerateCosine,
    NonFiniteError,
    WindowOutOfRange,
)
from .estimators import (
    MetaGradientEstimator,
    assemble_meta_gradient,
    es_meta_gradient,
    finite_difference_meta_gradient,
)
from .measurement import BiasVarianceRecord, EvaluationPoint, estimate_bias, estimate_variance
from .training import BanditMetaTrainer, GridMetaTrainer

__version__ = "0.1.0"

__all__ = [
    "BanditMetaTrainer",
    "BiasVarianceRecord",
    "BucketMismatch",
    "ConfigError",
    "DegenerateCosine",
    "EvaluationPoint",
    "GridMetaTrainer",
    "MetaGradientEstimator",
    "NonFiniteError",
    "WindowOutOfRange",
    "assemble_meta_gradient",
    "es_meta_gradient",
    "estimate_bias",
    "estimate_variance",
    "finite_difference_meta_gradient",
]
