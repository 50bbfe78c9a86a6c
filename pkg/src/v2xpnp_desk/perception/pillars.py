"""
Pillar feature extraction.

Points (N, >=4) of x, y, z, intensity in the ego frame are binned into
vertical pillars on the x/y grid of a PillarConfig. Each kept point is
decorated with its pillar-center offset, embedded by a shared linear+ReLU
layer, and max-pooled per pillar. The BEV map is the pillar grid max-pooled
over bev_stride x bev_stride blocks.
"""

import logging
from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.layers import Linear, Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.constants import PILLAR_POINT_FEATURES
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import PillarConfig

logger = logging.getLogger(__name__)

Z_SCALE_M = 4.0


@dataclass(frozen=True)
class PillarAssignment:
    """Points that survive the range filter and the caps."""

    point_index: np.ndarray  # (K,) rows of the input cloud
    cell_x: np.ndarray  # (K,) pillar column along x
    cell_y: np.ndarray  # (K,) pillar row along y

    def __len__(self) -> int:
        return int(self.point_index.shape[0])

    def flat_cells(self, config: PillarConfig) -> np.ndarray:
        return self.cell_x * config.grid_shape[1] + self.cell_y

    def bev_cells(self, config: PillarConfig) -> np.ndarray:
        stride = config.bev_stride
        return (self.cell_x // stride) * config.bev_shape[1] + self.cell_y // stride


def _within_group_rank(groups: np.ndarray) -> np.ndarray:
    """Position of each element among equal-valued elements, in array order."""
    order = np.argsort(groups, kind="stable")
    sorted_groups = groups[order]
    starts = np.r_[True, sorted_groups[1:] != sorted_groups[:-1]]
    group_start = np.flatnonzero(starts)
    rank_sorted = np.arange(groups.size) - group_start[np.cumsum(starts) - 1]
    rank = np.empty_like(rank_sorted)
    rank[order] = rank_sorted
    return rank


def assign_pillars(points: np.ndarray, config: PillarConfig) -> PillarAssignment:
    """
    Bin points into pillars and apply the per-pillar and pillar-count caps.

    Points are visited in a shuffled order seeded by config.shuffle_seed.
    A pillar keeps its first max_points_per_voxel points in that order, and
    only the first max_voxels distinct pillars to appear are kept.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 4:
        raise ShapeError(f"expected (N, >=4) points, got {points.shape}")

    (x_lo, x_hi), (y_lo, y_hi) = config.x_range, config.y_range
    inside = (
        (points[:, 0] >= x_lo)
        & (points[:, 0] < x_hi)
        & (points[:, 1] >= y_lo)
        & (points[:, 1] < y_hi)
    )
    idx = np.flatnonzero(inside)
    idx = idx[np.random.default_rng(config.shuffle_seed).permutation(idx.size)]

    nx, ny = config.grid_shape
    cx = ((points[idx, 0] - x_lo) // config.voxel_size).astype(np.int64)
    cy = ((points[idx, 1] - y_lo) // config.voxel_size).astype(np.int64)
    cx, cy = np.clip(cx, 0, nx - 1), np.clip(cy, 0, ny - 1)
    flat = cx * ny + cy

    keep = np.zeros(idx.size, dtype=bool)
    if idx.size:
        _, first_seen = np.unique(flat, return_index=True)
        allowed_first = np.sort(first_seen)[: config.max_voxels]
        allowed = np.isin(flat, flat[allowed_first])
        keep = allowed & (_within_group_rank(flat) < config.max_points_per_voxel)

    dropped = int(inside.sum() - keep.sum())
    if dropped:
        logger.debug(f"Pillar caps dropped {dropped} of {int(inside.sum())} points")
    return PillarAssignment(idx[keep], cx[keep], cy[keep])


def pillar_point_features(
    points: np.ndarray, assignment: PillarAssignment, config: PillarConfig
) -> np.ndarray:
    """
    Per-point pillar inputs: scaled x, y, z, intensity and the offset to the
    pillar center in voxel units.
    """
    pts = np.asarray(points, dtype=np.float64)[assignment.point_index]
    (x_lo, x_hi), (y_lo, y_hi) = config.x_range, config.y_range
    center_x = x_lo + (assignment.cell_x + 0.5) * config.voxel_size
    center_y = y_lo + (assignment.cell_y + 0.5) * config.voxel_size
    features = np.stack(
        [
            pts[:, 0] / max(abs(x_lo), abs(x_hi)),
            pts[:, 1] / max(abs(y_lo), abs(y_hi)),
            pts[:, 2] / Z_SCALE_M,
            pts[:, 3],
            (pts[:, 0] - center_x) / config.voxel_size,
            (pts[:, 1] - center_y) / config.voxel_size,
        ],
        axis=-1,
    )
    return features.reshape(-1, PILLAR_POINT_FEATURES)


class PillarEncoder(Module):
    """Shared point embedding followed by max pooling per cell."""

    def __init__(
        self, config: PillarConfig, channels: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.config = config
        self.channels = channels
        self.embed = self.module("embed", Linear(PILLAR_POINT_FEATURES, channels, rng))

    def point_features(self, points: np.ndarray) -> tuple[Tensor, PillarAssignment]:
        assignment = assign_pillars(points, self.config)
        inputs = Tensor(pillar_point_features(points, assignment, self.config))
        return ops.relu(self.embed(inputs)), assignment

    def pillar_grid(self, points: np.ndarray) -> Tensor:
        """Pillar-resolution feature grid (nx, ny, C)."""
        feats, assignment = self.point_features(points)
        nx, ny = self.config.grid_shape
        pooled = ops.segment_max(feats, assignment.flat_cells(self.config), nx * ny)
        return ops.reshape(pooled, (nx, ny, self.channels))

    def forward(self, points: np.ndarray) -> Tensor:
        """
        BEV-resolution feature grid (H, W, C).

        Pools points straight into BEV cells; the result equals
        bev_downsample(pillar_grid(points)) because a max of maxima is the
        overall maximum.
        """
        feats, assignment = self.point_features(points)
        h, w = self.config.bev_shape
        pooled = ops.segment_max(feats, assignment.bev_cells(self.config), h * w)
        return ops.reshape(pooled, (h, w, self.channels))


def pillar_extract(
    points: np.ndarray, config: PillarConfig, encoder: PillarEncoder
) -> Tensor:
    """Pillar grid for an ego-frame cloud; cells without points are zero."""
    if encoder.config != config:
        raise ShapeError("encoder was built for a different pillar grid")
    return encoder.pillar_grid(points)


def bev_downsample(grid: Tensor, stride: int) -> Tensor:
    """Max-pool an (nx, ny, C) grid over non-overlapping stride x stride blocks."""
    nx, ny, c = grid.shape
    if nx % stride or ny % stride:
        raise ShapeError(f"grid {grid.shape[:2]} not divisible by stride {stride}")
    h, w = nx // stride, ny // stride
    blocks = ops.reshape(grid, (h, stride, w, stride, c))
    blocks = ops.transpose(blocks, (0, 2, 1, 3, 4))
    blocks = ops.reshape(blocks, (h, w, stride * stride, c))
    return ops.max_reduce(blocks, axis=2)
