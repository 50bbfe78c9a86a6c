"""
BEV box geometry: rotated IoU and greedy non-maximum suppression.

Boxes are (x, y, z, w, l, h, yaw) rows. Overlaps are computed on the
ground plane by clipping the two rectangles as shapely polygons.
"""

import numpy as np
import shapely

from v2xpnp_desk.shared.errors import GeometryError
from v2xpnp_desk.shared.utils import box_corners


def _validated(boxes: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    if (arr[:, 3:5] <= 0).any():
        raise GeometryError(f"{name} contains a box with non-positive extent")
    if not np.isfinite(arr).all():
        raise GeometryError(f"{name} contains non-finite values")
    return arr


def rotated_iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """
    Pairwise BEV IoU between (N, 7) and (M, 7) boxes.

    Pairs whose circumscribed circles do not touch are skipped and score 0.

    Returns:
        np.ndarray: (N, M) float64 IoU in [0, 1].

    Raises:
        GeometryError: On a zero-area or non-finite box.
    """
    a = _validated(boxes_a, "boxes_a")
    b = _validated(boxes_b, "boxes_b")
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    if out.size == 0:
        return out

    radius_a = 0.5 * np.hypot(a[:, 3], a[:, 4])
    radius_b = 0.5 * np.hypot(b[:, 3], b[:, 4])
    gap = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    ii, jj = np.nonzero(gap <= radius_a[:, None] + radius_b[None, :])
    if ii.size == 0:
        return out

    poly_a = shapely.polygons(box_corners(a))
    poly_b = shapely.polygons(box_corners(b))
    inter = shapely.area(shapely.intersection(poly_a[ii], poly_b[jj]))
    area_a = a[:, 3] * a[:, 4]
    area_b = b[:, 3] * b[:, 4]
    union = area_a[ii] + area_b[jj] - inter
    out[ii, jj] = np.clip(inter / union, 0.0, 1.0)
    return out


def rotated_iou(box_a: np.ndarray, box_b: np.ndarray) -> float:
    """BEV IoU of two boxes."""
    pair = rotated_iou_matrix(np.reshape(box_a, (1, 7)), np.reshape(box_b, (1, 7)))
    return float(pair[0, 0])


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """
    Greedy NMS over (N, 7) boxes.

    Candidates are visited by descending score, ties broken by box x then y.
    A candidate is dropped when its IoU with an already kept box exceeds
    `iou_threshold`.

    Returns:
        np.ndarray: Indices of kept boxes in visiting order.
    """
    boxes = _validated(boxes, "boxes")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != boxes.shape[0]:
        raise GeometryError(
            f"{boxes.shape[0]} boxes but {scores.shape[0]} scores"
        )
    if boxes.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)

    order = np.lexsort((boxes[:, 1], boxes[:, 0], -scores))
    overlap = rotated_iou_matrix(boxes, boxes)
    suppressed = np.zeros(boxes.shape[0], dtype=bool)
    keep: list[int] = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= overlap[i] > iou_threshold
    return np.asarray(keep, dtype=np.int64)
