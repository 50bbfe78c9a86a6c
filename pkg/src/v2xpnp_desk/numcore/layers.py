"""
Parameter containers and the layers the fusion model is assembled from.
"""

import math
from collections.abc import Iterator, Mapping
from typing import Any, TypeVar

import numpy as np

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.attention import mhsa
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import CheckpointError

M = TypeVar("M", bound="Module")


class Module:
    """
    Tree of named parameters.

    Subclasses register parameters with `parameter` and children with
    `module`; names are dotted paths such as "temporal.layers.0.attn.wq.weight".
    """

    def __init__(self) -> None:
        self._parameters: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def parameter(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=True, name=name)
        self._parameters[name] = tensor
        return tensor

    def module(self, name: str, child: M) -> M:
        self._modules[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield prefix + name, tensor
        for name, child in self._modules.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(t.size for t in self._parameters.values()) + sum(
            child.num_parameters() for child in self._modules.values()
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.numpy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """
        Replace every parameter value.

        Raises:
            CheckpointError: On missing or unexpected names, or shape mismatch.
        """
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise CheckpointError(
                f"checkpoint mismatch: missing={missing[:5]} "
                f"unexpected={unexpected[:5]}"
            )
        for name, tensor in params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise CheckpointError(
                    f"checkpoint mismatch for {name}: {value.shape} vs {tensor.shape}"
                )
            tensor.data = value.astype(tensor.data.dtype, copy=True)

    def zero_grad(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.zero_grad()

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError


# ====================================================================================
# Basic Layers
# ====================================================================================


class Linear(Module):
    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bias: bool = True,
    ) -> None:
        super().__init__()
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        self.weight = self.parameter(
            "weight", rng.uniform(-limit, limit, size=(in_dim, out_dim))
        )
        self.bias = self.parameter("bias", np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = ops.add(out, self.bias)
        return out

    def set_identity(self) -> None:
        """Identity weights (square, or truncated/padded eye) and zero bias."""
        self.weight.data = np.eye(*self.weight.shape, dtype=self.weight.data.dtype)
        if self.bias is not None:
            self.bias.data = np.zeros_like(self.bias.data)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.gamma = self.parameter("gamma", np.ones(dim))
        self.beta = self.parameter("beta", np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator) -> None:
        super().__init__()
        self.layers = [
            self.module(str(i), Linear(dims[i], dims[i + 1], rng))
            for i in range(len(dims) - 1)
        ]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


# ====================================================================================
# Attention Layers
# ====================================================================================


class MultiHeadAttention(Module):
    """
    Projected multi-head attention with optional positional terms that are
    added to the query and key inputs before projection.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.heads = heads
        self.wq = self.module("wq", Linear(dim, dim, rng))
        self.wk = self.module("wk", Linear(dim, dim, rng))
        self.wv = self.module("wv", Linear(dim, dim, rng))
        self.wo = self.module("wo", Linear(dim, dim, rng))

    def forward(
        self,
        x_q: Tensor,
        x_kv: Tensor | None = None,
        score_bias: Any = None,
        key_mask: np.ndarray | None = None,
        q_pos: Any = None,
        k_pos: Any = None,
    ) -> Tensor:
        x_kv = x_q if x_kv is None else x_kv
        q_in = x_q if q_pos is None else ops.add(x_q, q_pos)
        k_in = x_kv if k_pos is None else ops.add(x_kv, k_pos)
        attended = mhsa(
            self.wq(q_in),
            self.wk(k_in),
            self.wv(x_kv),
            self.heads,
            score_bias=score_bias,
            key_mask=key_mask,
        )
        return self.wo(attended)


class AttentionBlock(Module):
    """
    Pre-norm transformer block: attention then a feed-forward MLP, each with a
    residual connection when `residual` is set.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        mlp_ratio: int = 2,
        residual: bool = True,
    ) -> None:
        super().__init__()
        self.residual = residual
        self.norm1 = self.module("norm1", LayerNorm(dim))
        self.attn = self.module("attn", MultiHeadAttention(dim, heads, rng))
        self.norm2 = self.module("norm2", LayerNorm(dim))
        self.mlp = self.module("mlp", MLP([dim, dim * mlp_ratio, dim], rng))

    def forward(
        self,
        x: Tensor,
        kv: Tensor | None = None,
        score_bias: Any = None,
        key_mask: np.ndarray | None = None,
        q_pos: Any = None,
        k_pos: Any = None,
    ) -> Tensor:
        if not self.residual:
            return self.attn(x, kv, score_bias, key_mask, q_pos, k_pos)
        q = self.norm1(x)
        k = q if kv is None else self.norm1(kv)
        h = ops.add(x, self.attn(q, k, score_bias, key_mask, q_pos, k_pos))
        return ops.add(h, self.mlp(self.norm2(h)))


def sinusoidal_encoding(
    values: np.ndarray, dim: int, scale: float = 1.0, planar: bool = False
) -> np.ndarray:
    """
    Sin/cos features of scalar or 2-D positions.

    Args:
        values (np.ndarray): (...,) scalars, or (..., 2) positions when `planar`.
        dim (int): Output width; split evenly over the input coordinates.
        scale (float): Multiplier applied to the inputs first.
        planar (bool): Treat the last axis as (x, y).

    Returns:
        np.ndarray: (..., dim) float array.
    """
    values = np.asarray(values, dtype=np.float64) * scale
    if not planar:
        values = values[..., None]
    coords = values.shape[-1]
    per_coord = dim // coords
    half = max(per_coord // 2, 1)
    freqs = 1.0 / (100.0 ** (np.arange(half) / half))
    parts = []
    for c in range(coords):
        angles = values[..., c : c + 1] * freqs
        parts += [np.sin(angles), np.cos(angles)]
    out = np.concatenate(parts, axis=-1)
    if out.shape[-1] < dim:
        pad = np.zeros(out.shape[:-1] + (dim - out.shape[-1],))
        out = np.concatenate([out, pad], axis=-1)
    return out[..., :dim]
