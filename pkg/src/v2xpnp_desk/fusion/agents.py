"""
Heterogeneous multi-agent spatial fusion.

At each BEV cell the tokens are the agents' features at that cell. Tokens
carry a learned agent-type embedding, and the score between agents i and j
is the bilinear form q_i (I + dW_e) k_j^T / sqrt(d) where e is the V-V, V-I,
I-V or I-I relation of the pair. Unconnected pairs are masked.
"""

import math
from collections.abc import Sequence

import numpy as np

from v2xpnp_desk.fusion.spatial import SelfSpatialFusion
from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.attention import mhsa, split_heads
from v2xpnp_desk.numcore.layers import MLP, LayerNorm, Linear, Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.constants import AGENT_KINDS, RELATION_TYPES
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import AgentKind, ModelConfig


class RelationAttention(Module):
    """
    Attention among agent tokens (..., A, C) with per-relation score terms.
    """

    def __init__(
        self,
        channels: int,
        heads: int,
        rng: np.random.Generator,
        mlp_ratio: int = 2,
        residual: bool = True,
    ) -> None:
        super().__init__()
        if channels % heads:
            raise ShapeError(f"channels={channels} not divisible by {heads} heads")
        self.heads = heads
        self.residual = residual
        d = channels // heads
        self.wq = self.module("wq", Linear(channels, channels, rng))
        self.wk = self.module("wk", Linear(channels, channels, rng))
        self.wv = self.module("wv", Linear(channels, channels, rng))
        self.wo = self.module("wo", Linear(channels, channels, rng))
        # W_e = I + delta_e; the identity part is the plain dot-product score
        self.relation_delta = self.parameter(
            "relation_delta",
            rng.normal(0.0, 0.1, size=(len(RELATION_TYPES), heads, d, d)),
        )
        self.norm1 = self.module("norm1", LayerNorm(channels))
        self.norm2 = self.module("norm2", LayerNorm(channels))
        self.mlp = self.module(
            "mlp", MLP([channels, channels * mlp_ratio, channels], rng)
        )

    def relation_bias(
        self, q: Tensor, k: Tensor, relations: np.ndarray
    ) -> Tensor | None:
        """
        Sum over relation types of mask_e * (q dW_e k^T) / sqrt(d), shaped
        (..., heads, A, A).
        """
        qh = split_heads(q, self.heads)
        kt = ops.swap_last(split_heads(k, self.heads))
        scale = 1.0 / math.sqrt(qh.shape[-1])
        bias: Tensor | None = None
        for r in range(len(RELATION_TYPES)):
            mask = relations == r
            if not mask.any():
                continue
            delta = ops.index(self.relation_delta, r)
            scores = ops.matmul(ops.matmul(qh, delta), kt)
            term = ops.mul(scores, mask.astype(np.float64) * scale)
            bias = term if bias is None else ops.add(bias, term)
        return bias

    def attend(self, x: Tensor, relations: np.ndarray) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        attended = mhsa(
            q,
            k,
            v,
            self.heads,
            score_bias=self.relation_bias(q, k, relations),
            key_mask=relations >= 0,
        )
        return self.wo(attended)

    def forward(self, x: Tensor, relations: np.ndarray) -> Tensor:
        """
        Args:
            x (Tensor): (..., A, C) agent tokens.
            relations (np.ndarray): (A, A) relation index of receiver i and
                sender j, -1 where the pair is not connected.
        """
        if not self.residual:
            return self.attend(x, relations)
        h = ops.add(x, self.attend(self.norm1(x), relations))
        return ops.add(h, self.mlp(self.norm2(h)))


class MultiAgentFusion(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        c = config.channels
        self.type_embedding = self.parameter(
            "type_embedding", rng.normal(0.0, 0.1, size=(len(AGENT_KINDS), c))
        )
        self.attention: list[RelationAttention] = []
        self.spatial: list[SelfSpatialFusion] = []
        for i in range(config.agent_layers):
            self.attention.append(
                self.module(
                    f"attention{i}",
                    RelationAttention(
                        c, config.agent_heads, rng, config.mlp_ratio, config.residual
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
                            config.spatial_heads_agent,
                            rng,
                            config.mlp_ratio,
                            config.residual,
                        ),
                    )
                )

    def forward(
        self,
        features: Sequence[Tensor],
        kinds: Sequence[AgentKind],
        relations: np.ndarray,
    ) -> Tensor:
        """
        Fuse ego-aligned (H, W, C) maps; index 0 is the ego.

        Args:
            features: One map per agent, already in the ego frame.
            kinds: Agent kind per map.
            relations (np.ndarray): (A, A) relation indices, -1 if unconnected.

        Returns:
            Tensor: (H, W, C) fused ego map.

        Raises:
            ShapeError: If there are no features or the inputs disagree.
        """
        if not features:
            raise ShapeError("multi-agent fusion needs at least the ego map")
        a = len(features)
        relations = np.asarray(relations, dtype=np.int64)
        if len(kinds) != a or relations.shape != (a, a):
            raise ShapeError(
                f"{a} maps, {len(kinds)} kinds and relations {relations.shape}"
            )
        if (np.diag(relations) < 0).any():
            raise ShapeError("every agent must attend to itself")

        kind_index = np.array([AGENT_KINDS.index(k.value) for k in kinds])
        embed = ops.embedding(self.type_embedding, kind_index)  # (A, C)
        x = ops.stack(list(features), axis=0)  # (A, H, W, C)
        x = ops.add(x, ops.reshape(embed, (a, 1, 1, embed.shape[-1])))
        x = ops.transpose(x, (1, 2, 0, 3))  # (H, W, A, C)
        for i, block in enumerate(self.attention):
            x = block(x, relations)
            if self.spatial:
                maps = ops.transpose(x, (2, 0, 1, 3))
                x = ops.transpose(self.spatial[i](maps), (1, 2, 0, 3))
        return ops.index(x, (slice(None), slice(None), 0))
