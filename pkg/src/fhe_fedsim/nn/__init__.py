"""Tensor/layer engine, the six architectures, and dataset utilities."""

from .data import (
    ClientSplit,
    DataError,
    DatasetPartition,
    load_ftns,
    load_image_dir,
    partition,
    save_ftns,
    synthetic_dataset,
)
from .layers import softmax_cross_entropy
from .models import (
    ARCHITECTURES,
    Model,
    ModelError,
    build_model,
    classification_metrics,
    evaluate_model,
    sgd_step,
)

__all__ = [
    "ARCHITECTURES",
    "ClientSplit",
    "DataError",
    "DatasetPartition",
    "Model",
    "ModelError",
    "build_model",
    "classification_metrics",
    "evaluate_model",
    "load_ftns",
    "load_image_dir",
    "partition",
    "save_ftns",
    "sgd_step",
    "softmax_cross_entropy",
    "synthetic_dataset",
]
