"""
Detection matching and average precision at a BEV IoU threshold.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.perception.geometry import rotated_iou_matrix
from v2xpnp_desk.shared.constants import AP_IOU_THRESHOLD
from v2xpnp_desk.shared.errors import MetricError
from v2xpnp_desk.shared.types import Detection


@dataclass(frozen=True)
class MatchResult:
    """
    One-to-one detection to ground truth assignment.

    Attributes:
        pairs: (K, 2) rows of (detection index, gt index).
        ious: (K,) IoU of each pair, all >= the threshold.
        unmatched_detections: Indices of false positives.
        unmatched_gt: Indices of missed objects.
    """

    pairs: np.ndarray
    ious: np.ndarray
    unmatched_detections: np.ndarray
    unmatched_gt: np.ndarray

    @property
    def num_gt(self) -> int:
        return int(self.pairs.shape[0] + self.unmatched_gt.shape[0])

    @property
    def false_positives(self) -> int:
        return int(self.unmatched_detections.shape[0])


def _boxes(detections: Sequence[Detection] | np.ndarray) -> np.ndarray:
    if isinstance(detections, np.ndarray):
        return detections.reshape(-1, 7)
    return np.array([d.box for d in detections], dtype=np.float64).reshape(-1, 7)


def match_detections(
    detections: Sequence[Detection] | np.ndarray,
    gt_boxes: np.ndarray,
    iou_threshold: float = AP_IOU_THRESHOLD,
) -> MatchResult:
    """
    Greedy matching, highest IoU first; ties go to the lower detection index,
    then the lower gt index.
    """
    det = _boxes(detections)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    iou = rotated_iou_matrix(det, gt)
    di, gi = np.nonzero(iou >= iou_threshold)
    pairs: list[tuple[int, int]] = []
    used_d: set[int] = set()
    used_g: set[int] = set()
    for k in np.lexsort((gi, di, -iou[di, gi])):
        d, g = int(di[k]), int(gi[k])
        if d in used_d or g in used_g:
            continue
        used_d.add(d)
        used_g.add(g)
        pairs.append((d, g))
    pair_arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return MatchResult(
        pairs=pair_arr,
        ious=iou[pair_arr[:, 0], pair_arr[:, 1]],
        unmatched_detections=np.array(
            [d for d in range(det.shape[0]) if d not in used_d], dtype=np.int64
        ),
        unmatched_gt=np.array(
            [g for g in range(gt.shape[0]) if g not in used_g], dtype=np.int64
        ),
    )


def detection_outcomes(
    detections: Sequence[Detection],
    gt_boxes: np.ndarray,
    iou_threshold: float = AP_IOU_THRESHOLD,
) -> np.ndarray:
    """
    True-positive flag per detection for one frame.

    Detections are visited by descending confidence; each claims the free
    ground truth box it overlaps most, if that overlap reaches the threshold.
    """
    if not detections:
        return np.zeros(0, dtype=bool)
    scores = np.array([d.confidence for d in detections])
    iou = rotated_iou_matrix(_boxes(detections), np.asarray(gt_boxes).reshape(-1, 7))
    taken = np.zeros(iou.shape[1], dtype=bool)
    tp = np.zeros(len(detections), dtype=bool)
    for d in np.argsort(-scores, kind="stable"):
        if iou.shape[1] == 0:
            break
        candidates = np.where(taken, -1.0, iou[d])
        g = int(np.argmax(candidates))
        if candidates[g] >= iou_threshold:
            taken[g] = True
            tp[d] = True
    return tp


def precision_recall(
    scores: np.ndarray, true_positive: np.ndarray, num_gt: int
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative precision and recall down the confidence ranking."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(true_positive, dtype=bool)[order]
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    recall = tp_cum / num_gt if num_gt else np.zeros_like(precision, dtype=np.float64)
    return precision, recall


def average_precision_from_outcomes(
    scores: np.ndarray, true_positive: np.ndarray, num_gt: int
) -> float:
    """
    Area under the all-point interpolated precision/recall curve.

    With no ground truth, AP is 1 if nothing was detected and 0 otherwise.

    Raises:
        MetricError: If scores and flags differ in length.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    true_positive = np.asarray(true_positive, dtype=bool).reshape(-1)
    if scores.shape != true_positive.shape:
        raise MetricError(
            f"{scores.shape[0]} scores but {true_positive.shape[0]} flags"
        )
    if num_gt == 0:
        return 1.0 if scores.size == 0 else 0.0
    if scores.size == 0:
        return 0.0

    precision, recall = precision_recall(scores, true_positive, num_gt)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    # Precision envelope: best precision at any recall to the right
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(
    detections: Sequence[Detection],
    gt_boxes: np.ndarray,
    iou_threshold: float = AP_IOU_THRESHOLD,
) -> float:
    """AP of one frame's detections against its ground truth boxes."""
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    tp = detection_outcomes(detections, gt, iou_threshold)
    scores = np.array([d.confidence for d in detections], dtype=np.float64)
    return average_precision_from_outcomes(scores, tp, gt.shape[0])
