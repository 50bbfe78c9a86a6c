"""
Float32 tensor engine: ops, reverse-mode autodiff, attention, layers, Adam and
checkpoints.
"""

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.attention import capture_attention, mhsa
from v2xpnp_desk.numcore.checkpoint import load_checkpoint, save_checkpoint
from v2xpnp_desk.numcore.gradcheck import GradCheckReport, gradient_check
from v2xpnp_desk.numcore.layers import (
    MLP,
    AttentionBlock,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
)
from v2xpnp_desk.numcore.optim import AdamState, adam_step
from v2xpnp_desk.numcore.tensor import (
    ComputationRecord,
    OpKind,
    Tensor,
    as_tensor,
    backward,
    precision,
)

__all__ = [
    "MLP",
    "AdamState",
    "AttentionBlock",
    "ComputationRecord",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "OpKind",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "capture_attention",
    "gradient_check",
    "load_checkpoint",
    "mhsa",
    "ops",
    "precision",
    "save_checkpoint",
]
