"""
Temporal fusion of a per-agent BEV history.

Every BEV cell attends only over its own T time tokens. Stacked modules
alternate temporal attention with self-spatial attention; the fused map is
the newest frame's token.
"""

import numpy as np

from v2xpnp_desk.fusion.spatial import SelfSpatialFusion
from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.layers import (
    AttentionBlock,
    Linear,
    Module,
    sinusoidal_encoding,
)
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import ModelConfig


class TemporalFusion(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        c = config.channels
        self.channels = c
        self.time_embed = self.module("time_embed", Linear(c, c, rng))
        self.attention: list[AttentionBlock] = []
        self.spatial: list[SelfSpatialFusion] = []
        for i in range(config.temporal_layers):
            self.attention.append(
                self.module(
                    f"attention{i}",
                    AttentionBlock(
                        c, config.temporal_heads, rng, config.mlp_ratio, config.residual
                    ),
                )
            )
            if config.use_self_spatial:
                self.spatial.append(
                    self.module(
                        f"spatial{i}",
                        SelfSpatialFusion(
                            c,
                            config.window_sizes,
                            config.spatial_heads_temporal,
                            rng,
                            config.mlp_ratio,
                            config.residual,
                        ),
                    )
                )

    def time_encoding(self, time_offsets: np.ndarray) -> Tensor:
        """(T, C) learned projection of sinusoidal time features."""
        return self.time_embed(Tensor(sinusoidal_encoding(time_offsets, self.channels)))

    def forward(
        self,
        stack: Tensor,
        valid: np.ndarray,
        time_offsets: np.ndarray | None = None,
    ) -> Tensor:
        """
        Fuse a (T, H, W, C) history, oldest first.

        Args:
            stack (Tensor): BEV maps; rows of invalid frames may hold anything.
            valid (np.ndarray): (T,) frames that carry data.
            time_offsets (np.ndarray | None): Frame offsets relative to the
                newest frame; defaults to -(T-1) .. 0.

        Returns:
            Tensor: (H, W, C) fused map of the newest frame.

        Raises:
            ShapeError: If no frame is valid or the mask does not match T.
        """
        t, h, w, c = stack.shape
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (t,):
            raise ShapeError(f"validity mask {valid.shape} for {t} frames")
        if not valid.any():
            raise ShapeError("temporal fusion needs at least one valid frame")
        if time_offsets is None:
            time_offsets = np.arange(-(t - 1), 1, dtype=np.float64)

        x = ops.add(stack, ops.reshape(self.time_encoding(time_offsets), (t, 1, 1, c)))
        x = ops.transpose(x, (1, 2, 0, 3))  # (H, W, T, C)
        key_mask = valid[None, :]
        for i, block in enumerate(self.attention):
            x = block(x, key_mask=key_mask)
            if self.spatial:
                frames = ops.transpose(x, (2, 0, 1, 3))
                x = ops.transpose(self.spatial[i](frames), (1, 2, 0, 3))
        return ops.index(x, (slice(None), slice(None), t - 1))
