"""Hyperbolic representation learning for domain-generalized category discovery.

Works on precomputed feature vectors: Poincare-ball geometry with analytic
gradients, prototype anchoring, the three-part loss stack, tangent-space mixing,
a numpy training loop, the clustering evaluation protocol and a feature-space
domain simulator.
"""

from .data import FeatureDataset, read_features, write_features
from .domains import DomainShift, DomainStats, SyntheticSpec, diversity_score, fid, simulate_domains
from .errors import (
    ConfigurationError,
    DataFormatError,
    DomainError,
    HiDISCError,
    InsufficientBatchError,
    InvalidInputError,
    NonFiniteGradientError,
    NumericError,
    ShapeError,
)
from .evaluation import EvalReport, estimate_k, evaluate_features, hungarian_accuracy, kmeans
from .geometry import distance, exp_map0, log_map0, mobius_add
from .losses import LossWeights, busemann_loss, contrastive_loss, outlier_loss
from .mixing import tangent_cutmix
from .model import Encoder, ProjectionHead
from .prototypes import PrototypeSet, place_prototypes
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DataFormatError",
    "DomainError",
    "DomainShift",
    "DomainStats",
    "Encoder",
    "EvalReport",
    "FeatureDataset",
    "HiDISCError",
    "InsufficientBatchError",
    "InvalidInputError",
    "LossWeights",
    "NonFiniteGradientError",
    "NumericError",
    "ProjectionHead",
    "PrototypeSet",
    "ShapeError",
    "SyntheticSpec",
    "TrainConfig",
    "busemann_loss",
    "contrastive_loss",
    "distance",
    "diversity_score",
    "estimate_k",
    "evaluate_features",
    "exp_map0",
    "fid",
    "hungarian_accuracy",
    "kmeans",
    "log_map0",
    "mobius_add",
    "outlier_loss",
    "place_prototypes",
    "read_features",
    "simulate_domains",
    "tangent_cutmix",
    "train",
    "write_features",
]
