"""
Multi-scale window self-attention over BEV maps.

Each branch partitions an (..., H, W, C) map into non-overlapping P x P
windows and runs attention among the P^2 cells of every window with a
learned relative position bias. Branch outputs are fused by split attention:
a pooled descriptor per branch goes through a shared MLP and a softmax over
branches yields per-channel mixing weights.
"""

import numpy as np

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.layers import MLP, AttentionBlock, Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ShapeError


def _window_perm(lead: int) -> list[int]:
    # Swaps the (P, W/P) pair; applying it twice is the identity
    return list(range(lead)) + [lead, lead + 2, lead + 1, lead + 3, lead + 4]


def window_partition(x: Tensor, size: int) -> Tensor:
    """(..., H, W, C) -> (..., H/P, W/P, P*P, C)."""
    *lead, h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError(f"grid {h}x{w} is not divisible by window size {size}")
    x = ops.reshape(x, (*lead, h // size, size, w // size, size, c))
    x = ops.transpose(x, _window_perm(len(lead)))
    return ops.reshape(x, (*lead, h // size, w // size, size * size, c))


def window_merge(x: Tensor, size: int) -> Tensor:
    """(..., H/P, W/P, P*P, C) -> (..., H, W, C)."""
    *lead, nh, nw, tokens, c = x.shape
    if tokens != size * size:
        raise ShapeError(f"{tokens} tokens per window, expected {size * size}")
    x = ops.reshape(x, (*lead, nh, nw, size, size, c))
    x = ops.transpose(x, _window_perm(len(lead)))
    return ops.reshape(x, (*lead, nh * size, nw * size, c))


def relative_position_index(size: int) -> np.ndarray:
    """(P^2, P^2) index into a (2P-1)^2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(size), np.arange(size), indexing="ij"))
    coords = coords.reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (size - 1)
    return rel[0] * (2 * size - 1) + rel[1]


class WindowAttention(Module):
    def __init__(
        self,
        channels: int,
        heads: int,
        size: int,
        rng: np.random.Generator,
        mlp_ratio: int = 2,
        residual: bool = True,
    ) -> None:
        super().__init__()
        self.size = size
        self.heads = heads
        self.block = self.module(
            "block", AttentionBlock(channels, heads, rng, mlp_ratio, residual)
        )
        self.bias_table = self.parameter(
            "bias_table", rng.normal(0.0, 0.02, size=(heads, (2 * size - 1) ** 2))
        )
        self._index = relative_position_index(size)

    def position_bias(self) -> Tensor:
        """(heads, P^2, P^2) additive score bias."""
        return ops.index(self.bias_table, (slice(None), self._index))

    def forward(self, x: Tensor) -> Tensor:
        windows = window_partition(x, self.size)
        attended = self.block(windows, score_bias=self.position_bias())
        return window_merge(attended, self.size)


class SelfSpatialFusion(Module):
    """Window attention at several window sizes, fused by split attention."""

    def __init__(
        self,
        channels: int,
        window_sizes: tuple[int, ...],
        heads: tuple[int, ...],
        rng: np.random.Generator,
        mlp_ratio: int = 2,
        residual: bool = True,
    ) -> None:
        super().__init__()
        if len(window_sizes) != len(heads):
            raise ShapeError("one head count per window size is required")
        self.branches = [
            self.module(
                f"window{size}",
                WindowAttention(channels, h, size, rng, mlp_ratio, residual),
            )
            for size, h in zip(window_sizes, heads, strict=True)
        ]
        self.split = self.module(
            "split", MLP([channels, max(channels // 2, 1), channels], rng)
        )

    def branch_weights(self, outputs: list[Tensor]) -> Tensor:
        """
        (K, ..., C) softmax weights over the K branches, one per channel.
        """
        descriptors = [self.split(ops.mean(o, axis=(-3, -2))) for o in outputs]
        return ops.softmax(ops.stack(descriptors, axis=0), axis=0)

    def forward(self, x: Tensor) -> Tensor:
        outputs = [branch(x) for branch in self.branches]
        if len(outputs) == 1:
            return outputs[0]
        weights = self.branch_weights(outputs)
        fused: Tensor | None = None
        for k, out in enumerate(outputs):
            w = ops.index(weights, k)
            w = ops.reshape(w, (*w.shape[:-1], 1, 1, w.shape[-1]))
            term = ops.mul(w, out)
            fused = term if fused is None else ops.add(fused, term)
        assert fused is not None
        return fused
