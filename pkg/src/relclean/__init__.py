"""Relevance-based cleaning of few-clean/many-noisy example sets and weighted classifiers."""
from .classifier import (
    ClassifierWeights,
    CosineClassifier,
    PrototypeClassifier,
    TrainConfig,
    compute_prototypes,
    concat_all_classes,
    cosine_predict,
    train_cosine,
)
from .cleaners import (
    BetaCleaner,
    GCNCleaner,
    GcnTrainConfig,
    LabelPropagationCleaner,
    LinearCleaner,
    LpConfig,
    MLPCleaner,
    RelevanceMap,
    SimilarityCleaner,
    train_gcn,
    train_mlp,
)
from .exceptions import ContractError, FormatError, NumericalError, RelcleanError
from .graph import AffinityGraph, build_affinity, normalize_row_stochastic, normalize_symmetric

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph",
    "BetaCleaner",
    "ClassifierWeights",
    "ContractError",
    "CosineClassifier",
    "FormatError",
    "GCNCleaner",
    "GcnTrainConfig",
    "LabelPropagationCleaner",
    "LinearCleaner",
    "LpConfig",
    "MLPCleaner",
    "NumericalError",
    "PrototypeClassifier",
    "RelcleanError",
    "RelevanceMap",
    "SimilarityCleaner",
    "TrainConfig",
    "build_affinity",
    "compute_prototypes",
    "concat_all_classes",
    "cosine_predict",
    "normalize_row_stochastic",
    "normalize_symmetric",
    "train_cosine",
    "train_gcn",
    "train_mlp",
]
