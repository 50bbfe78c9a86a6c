"""
Float32 tensors and the computation record used for reverse-mode differentiation.

A ComputationRecord is activated as a context manager. While it is active every
op whose output requires a gradient appends an OpRecord holding its inputs,
its output and an adjoint closure. `backward` walks the record in reverse.
"""

import contextlib
import contextvars
import logging
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np

from v2xpnp_desk.shared.errors import GraphError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

Adjoint = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_ACTIVE_RECORD: contextvars.ContextVar["ComputationRecord | None"] = (
    contextvars.ContextVar("v2xpnp_active_record", default=None)
)
_DTYPE: contextvars.ContextVar[type[np.floating[Any]]] = contextvars.ContextVar(
    "v2xpnp_dtype", default=np.float32
)


class OpKind(StrEnum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    MATMUL = "matmul"
    RELU = "relu"
    SIGMOID = "sigmoid"
    EXP = "exp"
    LOG = "log"
    ABS = "abs"
    POW = "pow"
    WHERE = "where"
    SOFTMAX = "softmax"
    SUM = "sum"
    MAX_REDUCE = "max_reduce"
    SEGMENT_MAX = "segment_max"
    CONCAT = "concat"
    SLICE = "slice"
    EMBEDDING = "embedding"
    LAYER_NORM = "layer_norm"
    RESHAPE = "reshape"
    TRANSPOSE = "transpose"
    BROADCAST = "broadcast"


def current_dtype() -> type[np.floating[Any]]:
    """Float type new tensors are created with."""
    return _DTYPE.get()


@contextlib.contextmanager
def precision(dtype: type[np.floating[Any]]) -> Iterator[None]:
    """
    Temporarily create tensors with another float type.

    Production code always runs in float32; float64 is used by the finite
    difference oracle in gradcheck.
    """
    token = _DTYPE.set(dtype)
    try:
        yield
    finally:
        _DTYPE.reset(token)


# ====================================================================================
# Tensor
# ====================================================================================


class Tensor:
    """
    N-dimensional float array with an optional gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    # Make ndarray <op> Tensor dispatch to the Tensor reflected operators
    __array_priority__ = 1000.0

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=current_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array."""
        return np.array(self.data, copy=True)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator overloads delegate to numcore.ops
    def __add__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.matmul(other, self)

    def __getitem__(self, index: Any) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.index(self, index)

    def reshape(self, *shape: int) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.transpose(self, axes if axes else None)

    def sum(self, axis: int | tuple[int, ...] | None = None) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.sum(self, axis)

    def mean(self, axis: int | tuple[int, ...] | None = None) -> "Tensor":
        from v2xpnp_desk.numcore import ops

        return ops.mean(self, axis)


def as_tensor(value: Any) -> Tensor:
    """Wrap arrays and scalars as constant tensors; pass tensors through."""
    return value if isinstance(value, Tensor) else Tensor(value)


# ====================================================================================
# Computation Record
# ====================================================================================


@dataclass(frozen=True)
class OpRecord:
    kind: OpKind
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoint: Adjoint


class ComputationRecord:
    """
    Ordered list of ops executed while the record is active.
    """

    def __init__(self) -> None:
        self.ops: list[OpRecord] = []
        self._tokens: list[contextvars.Token[ComputationRecord | None]] = []

    def __enter__(self) -> "ComputationRecord":
        self._tokens.append(_ACTIVE_RECORD.set(self))
        return self

    def __exit__(self, *exc: object) -> None:
        _ACTIVE_RECORD.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.ops)

    def append(self, op: OpRecord) -> None:
        self.ops.append(op)

    def kinds(self) -> list[OpKind]:
        return [op.kind for op in self.ops]


def active_record() -> ComputationRecord | None:
    return _ACTIVE_RECORD.get()


def record_op(
    kind: OpKind,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    adjoint: Adjoint,
) -> Tensor:
    """
    Wrap an op result, check it is finite and append it to the active record.

    Raises:
        NonFiniteError: If the result contains NaN or infinity.
    """
    data = np.asarray(data, dtype=current_dtype())
    if not np.isfinite(data).all():
        raise NonFiniteError(kind.value, f"output shape {data.shape}")
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    record = _ACTIVE_RECORD.get()
    if record is not None and out.requires_grad:
        record.append(OpRecord(kind, tuple(inputs), out, adjoint))
    return out


# ====================================================================================
# Backward Pass
# ====================================================================================


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_order(record: ComputationRecord) -> None:
    position: dict[int, int] = {}
    for idx, op in enumerate(record.ops):
        key = id(op.output)
        if key in position:
            raise GraphError(f"tensor produced twice in record (op {idx})")
        position[key] = idx
    for idx, op in enumerate(record.ops):
        for inp in op.inputs:
            if position.get(id(inp), -1) >= idx:
                raise GraphError(
                    f"op {idx} ({op.kind}) consumes a tensor produced at or after it"
                )


def backward(record: ComputationRecord, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """
    Reverse-mode pass from a scalar loss.

    Gradients are accumulated into `.grad` of every leaf that requires a
    gradient and contributed to the loss; the same arrays are returned keyed
    by tensor.

    Raises:
        ShapeError: If the loss is not a single element.
        GraphError: If the record is cyclic or the loss is unreachable.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    _check_order(record)

    produced = {id(op.output) for op in record.ops}
    if id(loss) not in produced and not loss.requires_grad:
        raise GraphError("loss was not produced under the active record")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}

    for op in reversed(record.ops):
        g = grads.pop(id(op.output), None)
        if g is None:
            continue
        input_grads = op.adjoint(g)
        for tensor, input_grad in zip(op.inputs, input_grads, strict=True):
            if input_grad is None or not tensor.requires_grad:
                continue
            input_grad = unbroadcast(np.asarray(input_grad), tensor.shape)
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + input_grad
            else:
                grads[key] = input_grad
                tensors[key] = tensor

    # Whatever is left belongs to leaves
    result: dict[Tensor, np.ndarray] = {}
    for key, g in grads.items():
        leaf = tensors[key]
        if not leaf.requires_grad or key in produced:
            continue
        g = g.astype(leaf.data.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result
