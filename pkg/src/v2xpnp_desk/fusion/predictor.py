"""
Decoupled trajectory predictor for tracked objects.

A constant-velocity rollout from the last two history points is the
baseline. A small attention model reads the history points and the nearest
lane polylines and adds a learned correction to every step offset. The
correction layer starts at zero, so an untrained predictor is exactly the
constant-velocity baseline.
"""

import numpy as np

from v2xpnp_desk.fusion.mapfeat import pool_waypoints
from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.layers import MLP, AttentionBlock, Linear, Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.constants import (
    MAP_POINT_ATTRIBUTES,
    MAP_POSITION_SCALE,
    PREDICTION_HORIZON,
)
from v2xpnp_desk.shared.errors import ShapeError

# dx, dy, time offset, validity
HISTORY_POINT_FEATURES = 4


def constant_velocity_offsets(
    history: np.ndarray, mask: np.ndarray, horizon: int = PREDICTION_HORIZON
) -> np.ndarray:
    """
    Step offsets (N, horizon, 2) repeating the last observed displacement.

    The displacement is taken between the two newest valid points and divided
    by their frame gap; objects with fewer than two valid points stay put.
    """
    history = np.asarray(history, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n, t = mask.shape
    velocity = np.zeros((n, 2))
    for i in range(n):
        valid = np.flatnonzero(mask[i])
        if valid.size >= 2:
            a, b = valid[-2], valid[-1]
            velocity[i] = (history[i, b] - history[i, a]) / (b - a)
    return np.repeat(velocity[:, None, :], horizon, axis=1)


class DecoupledPredictor(Module):
    def __init__(
        self,
        channels: int,
        heads: int,
        rng: np.random.Generator,
        map_hidden: int = 32,
        horizon: int = PREDICTION_HORIZON,
    ) -> None:
        super().__init__()
        self.horizon = horizon
        self.query = self.parameter("query", rng.normal(0.0, 0.1, size=(1, channels)))
        self.history_embed = self.module(
            "history_embed", Linear(HISTORY_POINT_FEATURES, channels, rng)
        )
        self.map_embed = self.module(
            "map_embed", MLP([MAP_POINT_ATTRIBUTES, map_hidden, channels], rng)
        )
        self.velocity_embed = self.module("velocity_embed", Linear(2, channels, rng))
        self.block = self.module("block", AttentionBlock(channels, heads, rng))
        self.out = self.module("out", Linear(channels, horizon * 2, rng))
        self.out.weight.data[:] = 0.0

    def forward(
        self,
        history: np.ndarray,
        mask: np.ndarray,
        polylines: np.ndarray,
        polyline_mask: np.ndarray,
        constant_velocity: bool = False,
    ) -> Tensor:
        """
        Predict step offsets for N objects.

        Args:
            history (np.ndarray): (N, T, 2) ego-frame centers, oldest first;
                the newest point is the current position.
            mask (np.ndarray): (N, T) valid history points.
            polylines (np.ndarray): (N, K, n, 7) map inputs relative to each
                object's current position.
            polyline_mask (np.ndarray): (N, K).
            constant_velocity (bool): Return the baseline only.

        Returns:
            Tensor: (N, horizon, 2) step offsets.
        """
        history = np.asarray(history, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        n, t, _ = history.shape
        if (
            mask.shape != (n, t)
            or polylines.shape[0] != n
            or polyline_mask.shape != polylines.shape[:2]
        ):
            raise ShapeError(
                f"history {history.shape}, mask {mask.shape}, "
                f"polylines {polylines.shape}"
            )
        baseline = constant_velocity_offsets(history, mask, self.horizon)
        if constant_velocity or n == 0:
            return Tensor(baseline)

        current = history[:, -1:, :]
        points = np.concatenate(
            [
                (history - current) * MAP_POSITION_SCALE,
                np.broadcast_to(
                    np.arange(-(t - 1), 1, dtype=np.float64)[None, :, None], (n, t, 1)
                ),
                mask[..., None].astype(np.float64),
            ],
            axis=-1,
        )
        history_tokens = self.history_embed(Tensor(points))  # (N, T, C)
        map_tokens = pool_waypoints(self.map_embed(Tensor(polylines)))  # (N, K, C)
        keys = ops.concat([history_tokens, map_tokens], axis=1)
        key_mask = np.concatenate([mask, polyline_mask], axis=1)
        key_mask[:, t - 1] = True  # current position

        velocity = Tensor(baseline[:, 0, :] * MAP_POSITION_SCALE)
        query = ops.add(self.query, self.velocity_embed(velocity))  # (N, C)
        query = ops.reshape(query, (n, 1, query.shape[-1]))
        attended = self.block(query, keys, key_mask=key_mask[:, None, None, :])
        correction = ops.reshape(self.out(attended), (n, self.horizon, 2))
        return ops.add(correction, baseline)
