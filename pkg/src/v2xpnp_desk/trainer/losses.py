"""
Training losses: focal classification, smooth-L1 box regression and squared
L2 trajectory error, combined with fixed weights.

Every loss is built from recorded ops so `backward` reaches the parameters.
"""

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.perception.anchors import AnchorTargets
from v2xpnp_desk.shared.constants import (
    FOCAL_ALPHA,
    FOCAL_GAMMA,
    LOSS_WEIGHT_CLS,
    LOSS_WEIGHT_PRED,
    LOSS_WEIGHT_REG,
    SMOOTH_L1_BETA,
)
from v2xpnp_desk.shared.errors import ShapeError, TrainingError

PROBABILITY_CLAMP = 1e-6


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    w_cla: float = Field(LOSS_WEIGHT_CLS, ge=0.0)
    w_reg: float = Field(LOSS_WEIGHT_REG, ge=0.0)
    w_pred: float = Field(LOSS_WEIGHT_PRED, ge=0.0)
    focal_alpha: float = Field(FOCAL_ALPHA, ge=0.0, le=1.0)
    focal_gamma: float = Field(FOCAL_GAMMA, ge=0.0)
    smooth_l1_beta: float = Field(SMOOTH_L1_BETA, gt=0.0)


def _zero() -> Tensor:
    return Tensor(np.zeros(()))


def clamp_probability(p: Tensor, eps: float = PROBABILITY_CLAMP) -> Tensor:
    """Clamp to [eps, 1 - eps]; clamped entries pass no gradient."""
    low = ops.where(p.data < eps, eps, p)
    return ops.where(low.data > 1.0 - eps, 1.0 - eps, low)


def focal_loss_terms(
    p_t: Tensor,
    alpha: float | np.ndarray = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Elementwise -alpha (1 - p_t)^gamma log(p_t)."""
    p_t = clamp_probability(p_t)
    modulator = ops.power(ops.sub(1.0, p_t), gamma)
    return ops.neg(ops.mul(ops.mul(alpha, modulator), ops.log(p_t)))


def focal_loss(
    logits: Tensor,
    labels: np.ndarray,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """
    Anchor classification loss.

    Positives use alpha and negatives 1 - alpha; ignored anchors (label -1)
    do not contribute. The positive and negative means are averaged with
    equal weight so a handful of positives is not drowned by thousands of
    background anchors; when one group is empty the other is used alone.

    Raises:
        ShapeError: If labels and logits disagree in shape.
        TrainingError: If every anchor is ignored.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise ShapeError(f"labels {labels.shape} vs logits {logits.shape}")
    positive = labels == 1
    negative = labels == 0
    if not positive.any() and not negative.any():
        raise TrainingError("focal loss: every anchor is ignored")

    p = ops.sigmoid(logits)
    p_t = ops.where(positive, p, ops.sub(1.0, p))
    alpha_t = np.where(positive, alpha, 1.0 - alpha)
    terms = focal_loss_terms(p_t, alpha_t, gamma)

    groups = [ops.mean(ops.index(terms, m)) for m in (positive, negative) if m.any()]
    if len(groups) == 1:
        return groups[0]
    return ops.mul(ops.add(groups[0], groups[1]), 0.5)


def smooth_l1(delta: Tensor, beta: float = SMOOTH_L1_BETA) -> Tensor:
    """Elementwise 0.5 d^2 / beta below beta, |d| - 0.5 beta above."""
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    magnitude = ops.abs(delta)
    quadratic = ops.mul(ops.power(delta, 2.0), 0.5 / beta)
    linear = ops.sub(magnitude, 0.5 * beta)
    return ops.where(magnitude.data < beta, quadratic, linear)


def regression_loss(
    box_codes: Tensor,
    targets: np.ndarray,
    positives: np.ndarray,
    beta: float = SMOOTH_L1_BETA,
) -> Tensor:
    """Smooth-L1 summed over the code, averaged over positive anchors."""
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        return _zero()
    delta = ops.sub(ops.index(box_codes, positives), targets[positives])
    per_anchor = ops.sum(smooth_l1(delta, beta), axis=-1)
    return ops.mean(per_anchor)


def prediction_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """
    Mean squared L2 distance over valid (object, step) pairs.

    Args:
        pred (Tensor): (N, T, 2) predicted positions.
        target (np.ndarray): (N, T, 2) true positions.
        mask (np.ndarray): (N, T) valid steps.

    Raises:
        TrainingError: If no step is valid.
    """
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != np.shape(target) or mask.shape != pred.shape[:2]:
        raise ShapeError(
            f"prediction {pred.shape}, target {np.shape(target)}, mask {mask.shape}"
        )
    if not mask.any():
        raise TrainingError("prediction loss needs at least one valid step")
    error = ops.sub(pred, np.where(mask[..., None], target, 0.0))
    squared = ops.sum(ops.power(error, 2.0), axis=-1)
    return ops.div(ops.sum(ops.mul(squared, mask)), float(mask.sum()))


def cumulative_positions(offsets: Tensor) -> Tensor:
    """(N, T, 2) step offsets to positions relative to the start."""
    steps = offsets.shape[-2]
    return ops.matmul(np.tril(np.ones((steps, steps))), offsets)


@dataclass(frozen=True)
class LossTerms:
    cls: Tensor
    reg: Tensor
    pred: Tensor
    total: Tensor

    def values(self) -> tuple[float, float, float, float]:
        return self.cls.item(), self.reg.item(), self.pred.item(), self.total.item()


def weighted_total(
    cls: Tensor, reg: Tensor, pred: Tensor, weights: LossWeights, w_pred: float
) -> Tensor:
    """w_cla L_cla + w_reg L_reg + w_pred L_pred."""
    total = ops.add(ops.mul(cls, weights.w_cla), ops.mul(reg, weights.w_reg))
    return ops.add(total, ops.mul(pred, w_pred))


def detection_losses(
    cls_logits: Tensor,
    box_codes: Tensor,
    offsets: Tensor,
    targets: AnchorTargets,
    weights: LossWeights,
    w_pred: float | None = None,
) -> LossTerms:
    """
    All three losses of one sample against its anchor targets.

    The prediction term compares cumulative positions of positive anchors;
    it is zero when no positive has a known future or its weight is zero.
    """
    w_pred = weights.w_pred if w_pred is None else w_pred
    cls = focal_loss(
        cls_logits, targets.labels, weights.focal_alpha, weights.focal_gamma
    )
    reg = regression_loss(
        box_codes, targets.box_codes, targets.positives, weights.smooth_l1_beta
    )
    positives = targets.positives
    mask = targets.offset_mask[positives]
    if w_pred > 0.0 and mask.any():
        pred = prediction_loss(
            cumulative_positions(ops.index(offsets, positives)),
            np.cumsum(targets.offsets[positives], axis=1),
            mask,
        )
    else:
        pred = _zero()
    return LossTerms(cls, reg, pred, weighted_total(cls, reg, pred, weights, w_pred))
