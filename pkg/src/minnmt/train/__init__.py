"""SGD training, in-process data-parallel workers and checkpoints."""

from .checkpoint import TrainingState, checkpoint, restore
from .loop import (
    GradientEngine,
    TrainStats,
    WorkerConfig,
    WorkerError,
    dropout_rng,
    split_rows,
    train_epoch,
    train_parallel,
)
from .optim import NonFiniteGradientError, OptimState, clip_and_step, global_norm

__all__ = [
    "GradientEngine", "NonFiniteGradientError", "OptimState", "TrainStats", "TrainingState",
    "WorkerConfig", "WorkerError", "checkpoint", "clip_and_step", "dropout_rng", "global_norm",
    "restore", "split_rows", "train_epoch", "train_parallel",
]
