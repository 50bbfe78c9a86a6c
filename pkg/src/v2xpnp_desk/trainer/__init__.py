"""
Losses, the staged training schedule and the training loop.
"""

from v2xpnp_desk.trainer.io import (
    TRAINING_LOG_FIELDS,
    EpochRecord,
    read_training_log,
    write_training_log,
)
from v2xpnp_desk.trainer.losses import (
    LossTerms,
    LossWeights,
    detection_losses,
    focal_loss,
    focal_loss_terms,
    prediction_loss,
    regression_loss,
    smooth_l1,
    weighted_total,
)
from v2xpnp_desk.trainer.loop import Sample, Trainer, TrainResult, build_samples, train
from v2xpnp_desk.trainer.schedule import StageConfig, StageName, TrainSchedule

__all__ = [
    "TRAINING_LOG_FIELDS",
    "EpochRecord",
    "LossTerms",
    "LossWeights",
    "Sample",
    "StageConfig",
    "StageName",
    "TrainResult",
    "TrainSchedule",
    "Trainer",
    "build_samples",
    "detection_losses",
    "focal_loss",
    "focal_loss_terms",
    "prediction_loss",
    "read_training_log",
    "regression_loss",
    "smooth_l1",
    "train",
    "weighted_total",
    "write_training_log",
]
