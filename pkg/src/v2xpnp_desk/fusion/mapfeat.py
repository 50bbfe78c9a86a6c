"""
Vector map features on the BEV grid and map-to-BEV attention.

Each BEV cell gathers its K nearest lane polylines (by polyline center).
Waypoints are described relative to the cell center, encoded by a shared
MLP and max-pooled along the polyline. The BEV token of a cell then attends
over itself and its map tokens.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.layers import MLP, AttentionBlock, Module, sinusoidal_encoding
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.perception.warp import cell_centers
from v2xpnp_desk.shared.constants import (
    MAP_POINT_ATTRIBUTES,
    MAP_POSITION_SCALE,
    WAYPOINTS_PER_POLYLINE,
)
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import PillarConfig, Pose, VectorMap
from v2xpnp_desk.shared.utils import world_to_local

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MapGridFeature:
    """
    Attributes:
        waypoints: (H, W, K, n, 7) x, y, dx, dy, lane type, previous x, previous y.
        mask: (H, W, K) True for real polylines.
        centers: (H, W, K, 2) polyline centers relative to the cell, scaled.
    """

    waypoints: np.ndarray
    mask: np.ndarray
    centers: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]


def _resample(points: np.ndarray, n: int) -> np.ndarray:
    if points.shape[0] == n:
        return points
    idx = np.linspace(0, points.shape[0] - 1, n).round().astype(np.int64)
    return points[idx]


def polyline_attributes(points: np.ndarray, lane_type: int) -> np.ndarray:
    """(n, 7) attributes of an ego-frame polyline in metres (unscaled)."""
    prev = np.vstack([points[:1], points[:-1]])
    step = np.vstack([points[1:], points[-1:]]) - points
    if len(points) > 1:
        step[-1] = points[-1] - points[-2]
    return np.column_stack(
        [points, step, np.full(len(points), float(lane_type)), prev]
    )


def gather_polylines(
    vector_map: VectorMap,
    ego_pose: Pose,
    sites: np.ndarray,
    polylines_per_site: int,
    waypoints: int = WAYPOINTS_PER_POLYLINE,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    The K nearest polylines of each ego-frame site (M, 2).

    Returns:
        tuple: (M, K, n, 7) scaled attributes relative to the site, (M, K)
            mask and (M, K, 2) scaled polyline centers relative to the site.
    """
    sites = np.asarray(sites, dtype=np.float64).reshape(-1, 2)
    m, k = sites.shape[0], polylines_per_site
    inputs = np.zeros((m, k, waypoints, MAP_POINT_ATTRIBUTES))
    mask = np.zeros((m, k), dtype=bool)
    centers = np.zeros((m, k, 2))
    if len(vector_map) == 0 or m == 0:
        return inputs, mask, centers

    local = np.stack(
        [
            world_to_local(
                _resample(np.asarray(p.points, dtype=np.float64), waypoints), ego_pose
            )
            for p in vector_map.polylines
        ]
    )  # (P, n, 2)
    attributes = np.stack(
        [
            polyline_attributes(pts, p.lane_type)
            for pts, p in zip(local, vector_map.polylines, strict=True)
        ]
    )
    poly_centers = local.mean(axis=1)

    taken = min(k, len(vector_map))
    nearest = np.argsort(cdist(sites, poly_centers), axis=1, kind="stable")[:, :taken]
    gathered = attributes[nearest].copy()  # (M, taken, n, 7)
    gathered[..., [0, 5]] -= sites[:, None, None, 0:1]
    gathered[..., [1, 6]] -= sites[:, None, None, 1:2]
    gathered[..., [0, 1, 2, 3, 5, 6]] *= MAP_POSITION_SCALE
    inputs[:, :taken] = gathered
    mask[:, :taken] = True
    offsets = poly_centers[nearest] - sites[:, None, :]
    centers[:, :taken] = offsets * MAP_POSITION_SCALE
    return inputs, mask, centers


def build_map_grid(
    vector_map: VectorMap,
    ego_pose: Pose,
    pillars: PillarConfig,
    shape: tuple[int, int],
    polylines_per_cell: int,
    waypoints: int = WAYPOINTS_PER_POLYLINE,
) -> MapGridFeature:
    """Nearest-polyline map inputs for every cell of an (H, W) grid."""
    h, w = shape
    inputs, mask, centers = gather_polylines(
        vector_map,
        ego_pose,
        cell_centers(pillars, shape).reshape(-1, 2),
        polylines_per_cell,
        waypoints,
    )
    k = polylines_per_cell
    return MapGridFeature(
        inputs.reshape(h, w, k, waypoints, MAP_POINT_ATTRIBUTES),
        mask.reshape(h, w, k),
        centers.reshape(h, w, k, 2),
    )


def pool_waypoints(encoded: Tensor) -> Tensor:
    """Max over the waypoint axis: (..., n, C) -> (..., C)."""
    return ops.max_reduce(encoded, axis=-2)


class MapEncoder(Module):
    def __init__(self, channels: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.mlp = self.module(
            "mlp", MLP([MAP_POINT_ATTRIBUTES, hidden, channels], rng)
        )

    def forward(self, feature: MapGridFeature) -> Tensor:
        """(H, W, K, C) polyline tokens; masked slots are zero."""
        pooled = pool_waypoints(self.mlp(Tensor(feature.waypoints)))
        return ops.mul(pooled, feature.mask[..., None].astype(np.float64))


class MapBevFusion(Module):
    """The BEV token of each cell attends over [itself, its map tokens]."""

    def __init__(
        self,
        channels: int,
        heads: int,
        rng: np.random.Generator,
        mlp_ratio: int = 2,
        residual: bool = True,
    ) -> None:
        super().__init__()
        self.channels = channels
        self.block = self.module(
            "block", AttentionBlock(channels, heads, rng, mlp_ratio, residual)
        )

    def forward(
        self, bev: Tensor, map_tokens: Tensor, feature: MapGridFeature
    ) -> Tensor:
        h, w, c = bev.shape
        k = feature.mask.shape[-1]
        if map_tokens.shape != (h, w, k, c) or feature.shape != (h, w):
            raise ShapeError(
                f"BEV {bev.shape} vs map tokens {map_tokens.shape} "
                f"and mask {feature.mask.shape}"
            )
        query = ops.reshape(bev, (h, w, 1, c))
        tokens = ops.concat([query, map_tokens], axis=2)

        origin = np.zeros((h, w, 1, 2))
        q_pos = sinusoidal_encoding(origin, c, planar=True)
        k_pos = np.concatenate(
            [q_pos, sinusoidal_encoding(feature.centers, c, planar=True)], axis=2
        )
        keep = np.concatenate([np.ones((h, w, 1), dtype=bool), feature.mask], axis=-1)
        out = self.block(
            query,
            tokens,
            key_mask=keep[:, :, None, None, :],
            q_pos=q_pos,
            k_pos=k_pos,
        )
        return ops.reshape(out, (h, w, c))
