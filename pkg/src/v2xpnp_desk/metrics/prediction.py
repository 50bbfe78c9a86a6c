"""
Trajectory metrics on matched objects: ADE, FDE, miss rate and EPA.
"""

from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.metrics.detection import MatchResult
from v2xpnp_desk.shared.constants import (
    EPA_FALSE_POSITIVE_PENALTY,
    EPA_FDE_THRESHOLD_M,
    MISS_RATE_THRESHOLD_M,
)
from v2xpnp_desk.shared.errors import MetricError, ShapeError
from v2xpnp_desk.shared.types import MetricsConfig


@dataclass(frozen=True)
class DisplacementMetrics:
    ade: float
    fde: float
    miss_rate: float
    count: int


def displacement_errors(
    predicted: np.ndarray, actual: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-object ADE and FDE over valid future steps.

    Args:
        predicted (np.ndarray): (K, H, 2) predicted centers.
        actual (np.ndarray): (K, H, 2) true centers.
        mask (np.ndarray): (K, H) steps where the truth exists.

    Returns:
        tuple: (K,) ADE and (K,) FDE; NaN for objects without a valid step.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if predicted.shape != actual.shape or predicted.shape[:2] != mask.shape:
        raise ShapeError(
            f"predicted {predicted.shape}, actual {actual.shape}, mask {mask.shape}"
        )
    k = mask.shape[0]
    error = np.linalg.norm(predicted - actual, axis=-1)
    count = mask.sum(axis=1)
    ade = np.full(k, np.nan)
    fde = np.full(k, np.nan)
    has = count > 0
    ade[has] = np.where(mask, error, 0.0)[has].sum(axis=1) / count[has]
    last = mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    fde[has] = error[np.arange(k), last][has]
    return ade, fde


def displacement_metrics(
    predicted: np.ndarray,
    actual: np.ndarray,
    mask: np.ndarray,
    miss_threshold: float = MISS_RATE_THRESHOLD_M,
) -> DisplacementMetrics:
    """
    Mean ADE, mean FDE and the share of objects with FDE above the miss
    threshold, over objects with at least one valid step.

    Raises:
        MetricError: If no object has a valid step.
    """
    ade, fde = displacement_errors(predicted, actual, mask)
    return reduce_displacement(ade, fde, miss_threshold)


def reduce_displacement(
    ade: np.ndarray, fde: np.ndarray, miss_threshold: float = MISS_RATE_THRESHOLD_M
) -> DisplacementMetrics:
    valid = np.isfinite(fde)
    if not valid.any():
        raise MetricError("no matched object has a valid future step")
    return DisplacementMetrics(
        ade=float(ade[valid].mean()),
        fde=float(fde[valid].mean()),
        miss_rate=float((fde[valid] > miss_threshold).mean()),
        count=int(valid.sum()),
    )


def epa_score(
    hits: int,
    false_positives: int,
    num_gt: int,
    alpha: float = EPA_FALSE_POSITIVE_PENALTY,
) -> float:
    """
    (hits - alpha * false_positives) / num_gt, not clamped.

    Raises:
        MetricError: If there is no ground truth.
    """
    if num_gt <= 0:
        raise MetricError("EPA is undefined without ground truth objects")
    return (hits - alpha * false_positives) / num_gt


def count_hits(fde: np.ndarray, threshold: float = EPA_FDE_THRESHOLD_M) -> int:
    """Matched objects whose FDE is strictly below the threshold."""
    fde = np.asarray(fde, dtype=np.float64)
    return int(np.sum(np.isfinite(fde) & (fde < threshold)))


def epa(
    match: MatchResult, fde: np.ndarray, config: MetricsConfig | None = None
) -> float:
    """
    End-to-end perception and prediction accuracy of one frame.

    Args:
        match (MatchResult): Detection matching of the frame.
        fde (np.ndarray): FDE per matched pair, in `match.pairs` order.
        config (MetricsConfig): Hit threshold and false-positive penalty.

    Raises:
        MetricError: If the frame has no ground truth objects.
    """
    config = config or MetricsConfig()
    fde = np.asarray(fde, dtype=np.float64).reshape(-1)
    if fde.shape[0] != match.pairs.shape[0]:
        raise ShapeError(f"{fde.shape[0]} FDE values for {match.pairs.shape[0]} pairs")
    return epa_score(
        count_hits(fde, config.epa_threshold_m),
        match.false_positives,
        match.num_gt,
        config.epa_false_positive_penalty,
    )
