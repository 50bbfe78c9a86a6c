"""
Differentiable ops on Tensor.

Every op computes its forward result with numpy and registers an adjoint
through `record_op`. Adjoints may return broadcast-shaped gradients; the
backward pass reduces them to the input shape.
"""

import math
from collections.abc import Sequence
from typing import Any

import numpy as np
from scipy import special

from v2xpnp_desk.numcore.tensor import OpKind, Tensor, as_tensor, record_op
from v2xpnp_desk.shared.errors import ShapeError

Axis = int | tuple[int, ...] | None


def _broadcast_shape(kind: OpKind, *tensors: Tensor) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(*(t.shape for t in tensors)))
    except ValueError as e:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"{kind.value}: cannot broadcast {shapes}") from e


# ====================================================================================
# Elementwise Arithmetic
# ====================================================================================


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.ADD, a, b)
    return record_op(OpKind.ADD, a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.SUB, a, b)
    return record_op(OpKind.SUB, a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.MUL, a, b)
    return record_op(
        OpKind.MUL, a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data)
    )


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(OpKind.DIV, a, b)
    out = a.data / b.data
    return record_op(
        OpKind.DIV, out, (a, b), lambda g: (g / b.data, -g * out / b.data)
    )


def neg(a: Any) -> Tensor:
    a = as_tensor(a)
    return record_op(OpKind.NEG, -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record_op(OpKind.RELU, a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = special.expit(a.data)
    return record_op(OpKind.SIGMOID, out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record_op(OpKind.EXP, out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return record_op(OpKind.LOG, out, (a,), lambda g: (g / a.data,))


def abs(a: Tensor) -> Tensor:  # noqa: A001
    return record_op(
        OpKind.ABS, np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),)
    )


def power(a: Tensor, exponent: float) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data**exponent
    return record_op(
        OpKind.POW,
        out,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
    )


def where(condition: np.ndarray, a: Any, b: Any) -> Tensor:
    """Select from `a` where `condition` holds, else from `b`."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    return record_op(
        OpKind.WHERE,
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (g * cond, g * ~cond),
    )


# ====================================================================================
# Linear Algebra
# ====================================================================================


def matmul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul: {e}") from e
    return record_op(
        OpKind.MATMUL,
        out,
        (a, b),
        lambda g: (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        ),
    )


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """
    Numerically stable softmax.

    Entries where `mask` is False are treated as -inf scores and receive
    exactly zero weight.

    Raises:
        ShapeError: If a row has every entry masked.
    """
    scores = x.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not keep.any(axis=axis).all():
            raise ShapeError("softmax: every entry of some row is masked")
        scores = np.where(keep, scores, -np.inf)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return record_op(
        OpKind.SOFTMAX,
        out,
        (x,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
    )


# ====================================================================================
# Reductions
# ====================================================================================


def _normalize_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else axis
    return tuple(sorted(a % ndim for a in axes))


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return record_op(OpKind.SUM, out, (x,), adjoint)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return mul(sum(x, axes, keepdims), 1.0 / count)


def max_reduce(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    if x.shape[axis] == 0:
        raise ShapeError("max_reduce over an empty axis")
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, idx, gk, axis=axis)
        return (gx,)

    return record_op(OpKind.MAX_REDUCE, out, (x,), adjoint)


def segment_max(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """
    Row-wise maximum of `x` (N, C) per segment id; empty segments are zero.

    The gradient of each (segment, channel) goes to the first row attaining it.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise ShapeError(f"segment_max: rows {x.shape} vs ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ShapeError("segment_max: segment id out of range")
    n, c = x.shape
    out = np.full((num_segments, c), -np.inf, dtype=x.data.dtype)
    np.maximum.at(out, ids, x.data)
    empty = np.isneginf(out)
    out[empty] = 0.0

    # First row attaining the maximum, per segment and channel
    rows = np.where(x.data == out[ids], np.arange(n)[:, None], n)
    first = np.full((num_segments, c), n, dtype=np.int64)
    np.minimum.at(first, ids, rows)
    hit = first < n
    hit_rows = first[hit]
    hit_cols = np.nonzero(hit)[1]

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        gx[hit_rows, hit_cols] = g[hit]
        return (gx,)

    return record_op(OpKind.SEGMENT_MAX, out, (x,), adjoint)


# ====================================================================================
# Shape and Indexing
# ====================================================================================


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: {x.shape} -> {tuple(shape)}") from e
    return record_op(OpKind.RESHAPE, out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(perm))
    return record_op(
        OpKind.TRANSPOSE,
        np.transpose(x.data, perm),
        (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def swap_last(x: Tensor) -> Tensor:
    """Swap the two trailing axes."""
    perm = list(range(x.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return transpose(x, perm)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = np.broadcast_to(x.data, tuple(shape))
    except ValueError as e:
        raise ShapeError(f"broadcast_to: {x.shape} -> {tuple(shape)}") from e
    return record_op(OpKind.BROADCAST, out, (x,), lambda g: (g,))


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def adjoint(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, offsets, axis=axis))

    return record_op(OpKind.CONCAT, out, parts, adjoint)


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("stack of an empty sequence")
    ndim = parts[0].ndim + 1
    axis = axis % ndim
    expanded = [
        reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts
    ]
    return concat(expanded, axis=axis)


def _is_advanced(index: Any) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def index(x: Tensor, key: Any) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    try:
        out = x.data[key]
    except (IndexError, ValueError) as e:
        raise ShapeError(f"index: {e}") from e
    advanced = _is_advanced(key)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        if advanced:
            np.add.at(gx, key, g)
        else:
            gx[key] = g
        return (gx,)

    return record_op(OpKind.SLICE, out, (x,), adjoint)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: output shape is indices.shape + (E,)."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("embedding: index out of range")

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return record_op(OpKind.EMBEDDING, table.data[idx], (table,), adjoint)


# ====================================================================================
# Normalization
# ====================================================================================


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: {x.shape} with gamma {gamma.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    out = xhat * gamma.data + beta.data

    def adjoint(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gamma.data
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, g * xhat, g

    return record_op(OpKind.LAYER_NORM, out, (x, gamma, beta), adjoint)
