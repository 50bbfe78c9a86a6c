"""
Head outputs to detections and trajectories.
"""

import numpy as np
from scipy.special import expit

from v2xpnp_desk.perception.anchors import AnchorGrid, decode_boxes
from v2xpnp_desk.perception.geometry import nms
from v2xpnp_desk.shared.constants import (
    BOX_CODE_SIZE,
    DETECTION_NMS_IOU,
    DETECTION_SCORE_THRESHOLD,
    PREDICTION_HORIZON,
)
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import Detection, PredictedTrajectory


def decode_detections(
    cls_logits: np.ndarray,
    box_codes: np.ndarray,
    grid: AnchorGrid,
    score_threshold: float = DETECTION_SCORE_THRESHOLD,
    nms_iou: float = DETECTION_NMS_IOU,
    source_agent: int = 0,
) -> list[Detection]:
    """
    Turn per-anchor logits (N,) and residuals (N, 8) into NMS-filtered
    detections, highest confidence first.

    Raises:
        ShapeError: If the outputs are not shaped per anchor.
    """
    n = len(grid)
    logits = np.asarray(cls_logits, dtype=np.float64).reshape(-1)
    codes = np.asarray(box_codes, dtype=np.float64)
    if logits.shape[0] != n or codes.shape != (n, BOX_CODE_SIZE):
        raise ShapeError(
            f"expected ({n},) logits and ({n}, {BOX_CODE_SIZE}) codes, "
            f"got {logits.shape} and {codes.shape}"
        )
    scores = expit(logits)
    candidates = np.flatnonzero(scores >= score_threshold)
    if candidates.size == 0:
        return []
    boxes = decode_boxes(codes[candidates], grid.anchors[candidates])
    keep = nms(boxes, scores[candidates], nms_iou)
    return [
        Detection(
            box=tuple(float(v) for v in boxes[k]),  # type: ignore[arg-type]
            confidence=float(scores[candidates[k]]),
            source_agent=source_agent,
            anchor_index=int(candidates[k]),
        )
        for k in keep
    ]


def decode_trajectories(
    pred_offsets: np.ndarray, detections: list[Detection]
) -> list[PredictedTrajectory]:
    """
    Accumulate per-anchor step offsets (N, 6, 2) from each detection's center.

    Raises:
        ShapeError: If the horizon is not 6 or a detection has no anchor.
    """
    offsets = np.asarray(pred_offsets, dtype=np.float64)
    if offsets.ndim != 3 or offsets.shape[1:] != (PREDICTION_HORIZON, 2):
        raise ShapeError(
            f"expected (N, {PREDICTION_HORIZON}, 2) offsets, got {offsets.shape}"
        )
    trajectories = []
    for det in detections:
        if det.anchor_index is None or not 0 <= det.anchor_index < offsets.shape[0]:
            raise ShapeError(
                f"detection has no usable anchor index: {det.anchor_index}"
            )
        points = np.asarray(det.box[:2]) + np.cumsum(offsets[det.anchor_index], axis=0)
        trajectories.append(
            PredictedTrajectory(points=tuple((float(x), float(y)) for x, y in points))
        )
    return trajectories
