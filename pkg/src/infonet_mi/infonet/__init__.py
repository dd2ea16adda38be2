"""The amortized InfoNet estimator: model, training and checkpoints."""

from .checkpoint import CheckpointFormatError, dumps, load_checkpoint, loads, save_checkpoint
from .model import (
    InfoNetConfig,
    InfoNetModel,
    default_smoothing,
    estimate_mi,
    estimate_mi_batch,
    gaussian_blur_table,
    gaussian_kernel,
)
from .training import TrainConfig, TrainingError, TrainLogRow, lr_at, simulate_batch, train

__all__ = [
    "CheckpointFormatError", "InfoNetConfig", "InfoNetModel", "TrainConfig", "TrainLogRow",
    "TrainingError", "default_smoothing", "dumps", "estimate_mi", "estimate_mi_batch",
    "gaussian_blur_table", "gaussian_kernel", "load_checkpoint", "loads", "lr_at",
    "save_checkpoint", "simulate_batch", "train",
]
