"""
Per-anchor detection and prediction heads.
"""

import math
from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.layers import Linear, Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.constants import BOX_CODE_SIZE, PREDICTION_HORIZON

# Foreground prior of the classification bias
CLS_PRIOR = 0.01


@dataclass
class HeadOutputs:
    """
    Attributes:
        cls_logits: (N,) per anchor.
        box_codes: (N, 8) residuals per anchor.
        offsets: (N, 6, 2) per-step future displacements per anchor.
    """

    cls_logits: Tensor
    box_codes: Tensor
    offsets: Tensor


class DetectionHead(Module):
    def __init__(
        self, channels: int, anchors_per_cell: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.anchors_per_cell = anchors_per_cell
        self.cls = self.module("cls", Linear(channels, anchors_per_cell, rng))
        self.reg = self.module(
            "reg", Linear(channels, anchors_per_cell * BOX_CODE_SIZE, rng)
        )
        prior = -math.log((1.0 - CLS_PRIOR) / CLS_PRIOR)
        self.cls.bias.data[:] = prior  # type: ignore[union-attr]

    def forward(self, feature: Tensor) -> tuple[Tensor, Tensor]:
        h, w, _ = feature.shape
        n = h * w * self.anchors_per_cell
        logits = ops.reshape(self.cls(feature), (n,))
        codes = ops.reshape(self.reg(feature), (n, BOX_CODE_SIZE))
        return logits, codes


class PredictionHead(Module):
    def __init__(
        self,
        channels: int,
        anchors_per_cell: int,
        rng: np.random.Generator,
        horizon: int = PREDICTION_HORIZON,
    ) -> None:
        super().__init__()
        self.anchors_per_cell = anchors_per_cell
        self.horizon = horizon
        self.offsets = self.module(
            "offsets", Linear(channels, anchors_per_cell * horizon * 2, rng)
        )

    def forward(self, feature: Tensor) -> Tensor:
        h, w, _ = feature.shape
        n = h * w * self.anchors_per_cell
        return ops.reshape(self.offsets(feature), (n, self.horizon, 2))
