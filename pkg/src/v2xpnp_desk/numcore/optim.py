"""
Adam with decoupled weight decay.
"""

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ShapeError


@dataclass
class AdamState:
    """Hyperparameters plus per-parameter moments."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
) -> AdamState:
    """
    Update every parameter that has a gradient, in place.

    Parameters without an entry in `grads` are left untouched, as are their
    moments. The same state and gradients always give the same update.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name}: {grad.shape} vs {param.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.m[name], state.v[name] = m, v

        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * param.data
        param.data = (param.data - state.lr * update).astype(param.data.dtype)

    return state
