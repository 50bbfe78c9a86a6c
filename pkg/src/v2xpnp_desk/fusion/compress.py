"""
Per-cell channel compression of shared BEV features.
"""

import math

import numpy as np

from v2xpnp_desk.numcore.layers import Linear, Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ConfigurationError, ShapeError


def compressed_channels(channels: int, rate: int) -> int:
    """ceil(C / r); rates above C leave one channel."""
    if isinstance(rate, bool) or not isinstance(rate, int) or rate < 1:
        raise ConfigurationError(
            f"compression rate must be an integer >= 1, got {rate!r}"
        )
    return math.ceil(channels / rate)


class ChannelCompressor(Module):
    """Linear C -> ceil(C/r) before sending and ceil(C/r) -> C on receipt."""

    def __init__(self, channels: int, rate: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.channels = channels
        self.rate = rate
        self.width = compressed_channels(channels, rate)
        self.encoder = self.module("encoder", Linear(channels, self.width, rng))
        self.decoder = self.module("decoder", Linear(self.width, channels, rng))
        if rate == 1:
            self.set_identity()

    def set_identity(self) -> None:
        """Identity maps (truncating when compressing)."""
        self.encoder.set_identity()
        self.decoder.set_identity()

    def compress(self, feature: Tensor) -> Tensor:
        if feature.shape[-1] != self.channels:
            raise ShapeError(
                f"expected {self.channels} channels, got {feature.shape[-1]}"
            )
        return self.encoder(feature)

    def decompress(self, feature: Tensor) -> Tensor:
        if feature.shape[-1] != self.width:
            raise ShapeError(f"expected {self.width} channels, got {feature.shape[-1]}")
        return self.decoder(feature)

    def forward(self, feature: Tensor) -> Tensor:
        return self.decompress(self.compress(feature))
