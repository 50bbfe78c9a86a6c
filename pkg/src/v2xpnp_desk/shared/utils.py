"""
Shared utility functions for V2XPnP Desk.

Planar rigid transforms, box geometry and atomic file writes.
Poses are (x, y, yaw) in world coordinates; boxes are (x, y, z, w, l, h, yaw)
with l measured along the heading.
"""

import logging
import os
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

Pose = tuple[float, float, float]

# ====================================================================================
# Angles and Rigid Transforms
# ====================================================================================


def wrap_angle(angle: np.ndarray | float) -> np.ndarray:
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(angle, dtype=np.float64) + np.pi) % (2.0 * np.pi) - np.pi


def rotation_matrix(yaw: float) -> np.ndarray:
    """2x2 counter-clockwise rotation."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def world_to_local(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Express world xy points (N, 2) in the frame of `pose`."""
    origin = np.array(pose[:2], dtype=np.float64)
    return (np.asarray(points, dtype=np.float64) - origin) @ rotation_matrix(pose[2])


def local_to_world(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Express local xy points (N, 2) of `pose` in world coordinates."""
    rot = rotation_matrix(pose[2])
    return np.asarray(points, dtype=np.float64) @ rot.T + np.array(pose[:2])


def relative_pose(source: Pose, target: Pose) -> Pose:
    """
    Pose of `source` expressed in the frame of `target`.

    Applying the result to points in the source frame maps them into the
    target frame.
    """
    xy = world_to_local(np.array([source[:2]]), target)[0]
    yaw = float(wrap_angle(source[2] - target[2]))
    return (float(xy[0]), float(xy[1]), yaw)


def transform_points(points: np.ndarray, transform: Pose) -> np.ndarray:
    """Apply a planar rigid transform to the xy columns of (N, >=2) points."""
    out = np.array(points, dtype=np.float64, copy=True)
    if out.shape[0] == 0:
        return out
    out[:, :2] = local_to_world(out[:, :2], transform)
    return out


def transform_boxes(boxes: np.ndarray, transform: Pose) -> np.ndarray:
    """Apply a planar rigid transform to (N, 7) boxes."""
    out = np.array(boxes, dtype=np.float64, copy=True).reshape(-1, 7)
    if out.shape[0] == 0:
        return out
    out[:, :2] = local_to_world(out[:, :2], transform)
    out[:, 6] = wrap_angle(out[:, 6] + transform[2])
    return out


# ====================================================================================
# Box Geometry
# ====================================================================================


def box_corners(boxes: np.ndarray) -> np.ndarray:
    """
    BEV corners of (N, 7) boxes.

    Returns:
        np.ndarray: (N, 4, 2) corners in counter-clockwise order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    half_l = boxes[:, 4] / 2.0
    half_w = boxes[:, 3] / 2.0
    # Local corners: (+l, +w), (-l, +w), (-l, -w), (+l, -w)
    local = np.stack(
        [
            np.stack([half_l, half_w], axis=-1),
            np.stack([-half_l, half_w], axis=-1),
            np.stack([-half_l, -half_w], axis=-1),
            np.stack([half_l, -half_w], axis=-1),
        ],
        axis=1,
    )
    c, s = np.cos(boxes[:, 6]), np.sin(boxes[:, 6])
    x = local[..., 0] * c[:, None] - local[..., 1] * s[:, None]
    y = local[..., 0] * s[:, None] + local[..., 1] * c[:, None]
    return np.stack([x + boxes[:, 0:1], y + boxes[:, 1:2]], axis=-1)


# ====================================================================================
# File IO
# ====================================================================================


def atomic_write_text(path: str | Path, text: str) -> Path:
    """UTF-8 text through atomic_write_bytes."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """
    Write `data` to `path` through a temp file, fsync and rename.

    Raises:
        OSError: If the write or the rename fails. The temp file is removed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    tmp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp_path, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())  # force write to disk

        tmp_path.replace(path)
    except OSError as e:
        if tmp_path.exists():
            tmp_path.unlink()
        logger.error(f"Error writing {path}: {e}")
        raise e

    return path
