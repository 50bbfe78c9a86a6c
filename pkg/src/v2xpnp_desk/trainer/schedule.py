"""
Multi-stage training schedule.

    1a  single agent, single frame: backbone, fusion blocks and detection head
    1b  single agent, full history: temporal fusion, map and prediction head
        with the backbone frozen
    1c  single agent, full history: everything but the late-fusion predictor
    2   cooperative inputs, joint training with the prediction weight ramped
"""

from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from v2xpnp_desk.fusion.model import PARAM_GROUPS
from v2xpnp_desk.shared.constants import (
    EARLY_STOPPING_PATIENCE,
    EPOCHS_PER_STAGE,
    LEARNING_RATE,
    LOSS_WEIGHT_PRED,
    WEIGHT_DECAY,
)
from v2xpnp_desk.trainer.losses import LossWeights


class StageName(StrEnum):
    SINGLE_FRAME = "1a"
    TEMPORAL = "1b"
    JOINT = "1c"
    COOPERATIVE = "2"


STAGE_ORDER = list(StageName)

ALL_BUT_PREDICTOR = tuple(g for g in PARAM_GROUPS if g != "predictor")


class StageConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: StageName
    epochs: int = Field(EPOCHS_PER_STAGE, ge=0)
    groups: tuple[str, ...] = Field(..., min_length=1, description="Trainable groups")
    history: bool = Field(True, description="Feed the full history, not one frame")
    multi_agent: bool = False
    w_pred_start: float = Field(LOSS_WEIGHT_PRED, ge=0.0)
    w_pred_end: float = Field(LOSS_WEIGHT_PRED, ge=0.0)

    @model_validator(mode="after")
    def _check_groups(self) -> "StageConfig":
        unknown = set(self.groups) - set(PARAM_GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
        return self

    def w_pred(self, epoch: int) -> float:
        """Prediction weight at a 0-based epoch, linear from start to end."""
        if self.epochs <= 1:
            return self.w_pred_end
        fraction = min(max(epoch, 0), self.epochs - 1) / (self.epochs - 1)
        return self.w_pred_start + (self.w_pred_end - self.w_pred_start) * fraction


def default_stages(epochs: int = EPOCHS_PER_STAGE) -> list[StageConfig]:
    return [
        StageConfig(
            name=StageName.SINGLE_FRAME,
            epochs=epochs,
            groups=("backbone", "temporal", "agent", "map", "detection_head"),
            history=False,
            w_pred_start=0.0,
            w_pred_end=0.0,
        ),
        StageConfig(
            name=StageName.TEMPORAL,
            epochs=epochs,
            groups=("temporal", "map", "prediction_head"),
        ),
        StageConfig(name=StageName.JOINT, epochs=epochs, groups=ALL_BUT_PREDICTOR),
        StageConfig(
            name=StageName.COOPERATIVE,
            epochs=epochs,
            groups=ALL_BUT_PREDICTOR,
            multi_agent=True,
            w_pred_start=0.0,
        ),
    ]


class TrainSchedule(BaseModel):
    """
    Stages run in order with a fresh Adam state per stage; parameters
    outside a stage's groups are never updated during it.
    """

    model_config = ConfigDict(extra="forbid")

    stages: list[StageConfig] = Field(default_factory=default_stages)
    lr: float = Field(LEARNING_RATE, gt=0.0)
    weight_decay: float = Field(WEIGHT_DECAY, ge=0.0)
    patience: int | None = Field(
        EARLY_STOPPING_PATIENCE, ge=1, description="None disables early stopping"
    )
    weights: LossWeights = Field(default_factory=LossWeights)
    cooperative_strategy: Literal[
        "intermediate_one_step", "intermediate_multi_step"
    ] = "intermediate_one_step"
    predictor_epochs: int = Field(EPOCHS_PER_STAGE, ge=0)

    @model_validator(mode="after")
    def _check_order(self) -> "TrainSchedule":
        positions = [STAGE_ORDER.index(s.name) for s in self.stages]
        if positions != sorted(positions):
            raise ValueError(
                f"stages out of order: {[str(s.name) for s in self.stages]}"
            )
        return self

    @classmethod
    def with_epochs(cls, epochs: int, **kwargs: object) -> "TrainSchedule":
        """Default stages with `epochs` each; the predictor gets the same."""
        return cls.model_validate(
            {"stages": default_stages(epochs), "predictor_epochs": epochs, **kwargs}
        )
