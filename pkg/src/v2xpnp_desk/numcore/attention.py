"""
Scaled dot-product multi-head attention.
"""

import contextlib
import contextvars
import math
from collections.abc import Iterator
from typing import Any

import numpy as np

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.tensor import Tensor, as_tensor
from v2xpnp_desk.shared.errors import ShapeError

_CAPTURE: contextvars.ContextVar[list[np.ndarray] | None] = contextvars.ContextVar(
    "v2xpnp_attention_capture", default=None
)


@contextlib.contextmanager
def capture_attention() -> Iterator[list[np.ndarray]]:
    """Collect a copy of every attention weight matrix computed in the block."""
    captured: list[np.ndarray] = []
    token = _CAPTURE.set(captured)
    try:
        yield captured
    finally:
        _CAPTURE.reset(token)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., N, D) -> (..., heads, N, D / heads)."""
    *lead, n, d = x.shape
    if d % heads:
        raise ShapeError(f"feature dim {d} not divisible by {heads} heads")
    x = ops.reshape(x, (*lead, n, heads, d // heads))
    nd = x.ndim
    perm = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return ops.transpose(x, perm)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, N, d) -> (..., N, heads * d)."""
    *lead, h, n, d = x.shape
    nd = x.ndim
    perm = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return ops.reshape(ops.transpose(x, perm), (*lead, n, h * d))


def mhsa(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    score_bias: Any = None,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """
    Multi-head attention over already projected queries, keys and values.

    Args:
        q (Tensor): (..., Nq, D) queries.
        k (Tensor): (..., Nk, D) keys.
        v (Tensor): (..., Nk, Dv) values.
        heads (int): Number of heads; must divide D and Dv.
        score_bias: Additive bias broadcastable to (..., heads, Nq, Nk).
        key_mask (np.ndarray | None): Boolean, broadcastable to the score shape;
            False entries get -inf scores inside the softmax.

    Returns:
        Tensor: (..., Nq, Dv).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    vh = split_heads(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])

    scores = ops.mul(ops.matmul(qh, ops.swap_last(kh)), scale)
    if score_bias is not None:
        scores = ops.add(scores, as_tensor(score_bias))
    weights = ops.softmax(scores, axis=-1, mask=key_mask)

    captured = _CAPTURE.get()
    if captured is not None:
        captured.append(weights.numpy())

    return merge_heads(ops.matmul(weights, vh))
