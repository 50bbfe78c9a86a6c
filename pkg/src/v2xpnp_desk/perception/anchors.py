"""
Anchor grid, box residual encoding and training-target assignment.

Anchors sit at BEV cell centers, ANCHORS_PER_CELL per cell with the yaws in
ANCHOR_YAWS. Anchor index is (row * W + col) * ANCHORS_PER_CELL + k, matching
a head output of shape (H, W, ANCHORS_PER_CELL * D) reshaped to (-1, D).
"""

import logging
from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.perception.geometry import rotated_iou_matrix
from v2xpnp_desk.shared.constants import (
    ANCHOR_YAWS,
    BOX_CODE_SIZE,
    NEGATIVE_IOU,
    POSITIVE_IOU,
    PREDICTION_HORIZON,
)
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import PillarConfig
from v2xpnp_desk.shared.utils import wrap_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorGrid:
    anchors: np.ndarray  # (H * W * per_cell, 7)
    shape: tuple[int, int]
    per_cell: int

    def __len__(self) -> int:
        return int(self.anchors.shape[0])


def build_anchor_grid(
    pillars: PillarConfig,
    anchor_size: tuple[float, float, float],
    yaws: tuple[float, ...] = ANCHOR_YAWS,
) -> AnchorGrid:
    """Anchors of size (w, l, h) resting on the ground at every BEV cell center."""
    h, w = pillars.bev_shape
    cell = pillars.bev_cell_size
    width, length, height = anchor_size
    cx = pillars.x_range[0] + (np.arange(h) + 0.5) * cell
    cy = pillars.y_range[0] + (np.arange(w) + 0.5) * cell
    gx, gy, gyaw = np.meshgrid(cx, cy, np.asarray(yaws), indexing="ij")
    n = gx.size
    anchors = np.stack(
        [
            gx.ravel(),
            gy.ravel(),
            np.full(n, height / 2.0),
            np.full(n, width),
            np.full(n, length),
            np.full(n, height),
            gyaw.ravel(),
        ],
        axis=-1,
    )
    return AnchorGrid(anchors, (h, w), len(yaws))


# ====================================================================================
# Residual Encoding
# ====================================================================================


def encode_boxes(boxes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """
    Residuals of (N, 7) boxes against (N, 7) anchors.

    Center offsets are divided by the anchor's BEV diagonal (z by its
    height), sizes become log ratios and yaw becomes (sin, cos) of the
    difference.

    Returns:
        np.ndarray: (N, 8) codes.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    if boxes.shape != anchors.shape:
        raise ShapeError(f"boxes {boxes.shape} vs anchors {anchors.shape}")
    diag = np.hypot(anchors[:, 3], anchors[:, 4])
    dyaw = boxes[:, 6] - anchors[:, 6]
    return np.stack(
        [
            (boxes[:, 0] - anchors[:, 0]) / diag,
            (boxes[:, 1] - anchors[:, 1]) / diag,
            (boxes[:, 2] - anchors[:, 2]) / anchors[:, 5],
            np.log(boxes[:, 3] / anchors[:, 3]),
            np.log(boxes[:, 4] / anchors[:, 4]),
            np.log(boxes[:, 5] / anchors[:, 5]),
            np.sin(dyaw),
            np.cos(dyaw),
        ],
        axis=-1,
    )


def decode_boxes(codes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Inverse of encode_boxes. An all-zero code decodes to the anchor."""
    codes = np.asarray(codes, dtype=np.float64).reshape(-1, BOX_CODE_SIZE)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    if codes.shape[0] != anchors.shape[0]:
        raise ShapeError(f"{codes.shape[0]} codes for {anchors.shape[0]} anchors")
    diag = np.hypot(anchors[:, 3], anchors[:, 4])
    # Log-size codes are clipped so untrained heads cannot overflow exp
    sizes = anchors[:, 3:6] * np.exp(np.clip(codes[:, 3:6], -8.0, 8.0))
    yaw = anchors[:, 6] + np.arctan2(codes[:, 6], codes[:, 7])
    return np.stack(
        [
            anchors[:, 0] + codes[:, 0] * diag,
            anchors[:, 1] + codes[:, 1] * diag,
            anchors[:, 2] + codes[:, 2] * anchors[:, 5],
            sizes[:, 0],
            sizes[:, 1],
            sizes[:, 2],
            wrap_angle(yaw),
        ],
        axis=-1,
    )


# ====================================================================================
# Target Assignment
# ====================================================================================


@dataclass(frozen=True)
class AnchorTargets:
    """
    Per-anchor training targets.

    Attributes:
        labels: (N,) 1 positive, 0 negative, -1 ignored.
        matched: (N,) index of the matched gt box, -1 when none.
        box_codes: (N, 8) residual targets; zero off positives.
        offsets: (N, T, 2) per-step displacement targets of the matched gt.
        offset_mask: (N, T) True where the step and all earlier ones exist.
    """

    labels: np.ndarray
    matched: np.ndarray
    box_codes: np.ndarray
    offsets: np.ndarray
    offset_mask: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return self.labels == 1

    @property
    def negatives(self) -> np.ndarray:
        return self.labels == 0


def future_offsets(
    centers: np.ndarray, futures: np.ndarray, future_mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Step displacements of future centers starting from the current center.

    A step is valid only when it and every earlier step exist, so that the
    cumulative sum of valid offsets always lands on a real position.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 1, 2)
    futures = np.asarray(futures, dtype=np.float64)
    path = np.concatenate([centers, futures], axis=1)
    offsets = np.diff(path, axis=1)
    mask = np.cumprod(np.asarray(future_mask, dtype=bool), axis=1).astype(bool)
    return np.where(mask[..., None], offsets, 0.0), mask


def assign_anchors(
    grid: AnchorGrid,
    gt_boxes: np.ndarray,
    gt_futures: np.ndarray | None = None,
    gt_future_mask: np.ndarray | None = None,
    positive_iou: float = POSITIVE_IOU,
    negative_iou: float = NEGATIVE_IOU,
    horizon: int = PREDICTION_HORIZON,
) -> AnchorTargets:
    """
    Label anchors against gt boxes in the ego frame.

    An anchor is positive when its best BEV IoU reaches `positive_iou`,
    negative below `negative_iou` and ignored in between. Each gt box also
    claims its single best-overlapping anchor as a positive.
    """
    n = len(grid)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    m = gt_boxes.shape[0]
    labels = np.zeros(n, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    box_codes = np.zeros((n, BOX_CODE_SIZE))
    offsets = np.zeros((n, horizon, 2))
    offset_mask = np.zeros((n, horizon), dtype=bool)
    if m == 0:
        return AnchorTargets(labels, matched, box_codes, offsets, offset_mask)

    iou = rotated_iou_matrix(grid.anchors, gt_boxes)
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(n), best_gt]

    labels[(best_iou >= negative_iou) & (best_iou < positive_iou)] = -1
    positive = best_iou >= positive_iou
    matched[positive] = best_gt[positive]
    for j in range(m):
        a = int(iou[:, j].argmax())
        if iou[a, j] > 0.0:
            positive[a] = True
            matched[a] = j
    labels[positive] = 1

    pos = np.flatnonzero(positive)
    box_codes[pos] = encode_boxes(gt_boxes[matched[pos]], grid.anchors[pos])
    if gt_futures is not None and gt_future_mask is not None:
        gt_offsets, gt_mask = future_offsets(
            gt_boxes[:, :2], gt_futures, gt_future_mask
        )
        offsets[pos] = gt_offsets[matched[pos]]
        offset_mask[pos] = gt_mask[matched[pos]]

    logger.debug(f"Assigned {pos.size} positive anchors to {m} boxes")
    return AnchorTargets(labels, matched, box_codes, offsets, offset_mask)
