"""
Nearest-cell resampling of BEV feature maps between agent frames.
"""

import numpy as np

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import PillarConfig, Pose
from v2xpnp_desk.shared.utils import world_to_local


def cell_centers(pillars: PillarConfig, shape: tuple[int, int]) -> np.ndarray:
    """(H, W, 2) BEV cell centers; rows past the unpadded grid continue outward."""
    cell = pillars.bev_cell_size
    cx = pillars.x_range[0] + (np.arange(shape[0]) + 0.5) * cell
    cy = pillars.y_range[0] + (np.arange(shape[1]) + 0.5) * cell
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def warp_indices(
    source_to_target: Pose, pillars: PillarConfig, shape: tuple[int, int]
) -> np.ndarray:
    """
    Flat source cell for each target cell, or H * W where the target cell
    center falls outside the source grid.
    """
    h, w = shape
    targets = cell_centers(pillars, shape).reshape(-1, 2)
    in_source = world_to_local(targets, source_to_target)
    cell = pillars.bev_cell_size
    i = np.floor((in_source[:, 0] - pillars.x_range[0]) / cell).astype(np.int64)
    j = np.floor((in_source[:, 1] - pillars.y_range[0]) / cell).astype(np.int64)
    valid = (i >= 0) & (i < h) & (j >= 0) & (j < w)
    return np.where(valid, i * w + j, h * w)


def warp_bev(feature: Tensor, source_to_target: Pose, pillars: PillarConfig) -> Tensor:
    """
    Resample an (H, W, C) map from a source agent frame into a target frame.

    `source_to_target` is the source frame's pose expressed in the target
    frame. Target cells that see no source cell are zero.
    """
    if feature.ndim != 3:
        raise ShapeError(f"expected (H, W, C) feature, got {feature.shape}")
    h, w, c = feature.shape
    if tuple(float(v) for v in source_to_target) == (0.0, 0.0, 0.0):
        return feature
    table = ops.concat(
        [ops.reshape(feature, (h * w, c)), np.zeros((1, c), dtype=feature.data.dtype)],
        axis=0,
    )
    gathered = ops.embedding(table, warp_indices(source_to_target, pillars, (h, w)))
    return ops.reshape(gathered, (h, w, c))
