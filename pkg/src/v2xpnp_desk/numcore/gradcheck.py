"""
Finite-difference verification of reverse-mode gradients.

Analytic gradients come from the float32 record. The numeric oracle evaluates
the same function in float64: a 1e-3 central difference in float32 is
dominated by rounding of the loss. Coordinates sitting on a kink (ReLU, max)
are detected by comparing central differences at h and h/2 and replaced.
"""

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.numcore.tensor import ComputationRecord, Tensor, backward, precision
from v2xpnp_desk.shared.constants import (
    GRADCHECK_FLOOR,
    GRADCHECK_PERTURBATION,
    GRADCHECK_TOLERANCE,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradCheckEntry:
    parameter: str
    flat_index: int
    analytic: float
    numeric: float
    error: float


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)
    skipped_kinks: int = 0

    @property
    def max_error(self) -> float:
        return max((e.error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.entries) and self.max_error <= self.tolerance


def relative_error(
    analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR
) -> float:
    """|a - n| / max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    count: int = 20,
    perturbation: float = GRADCHECK_PERTURBATION,
    tolerance: float = GRADCHECK_TOLERANCE,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare analytic and central-difference gradients at random coordinates.

    Args:
        fn: Builds the scalar loss from the current parameter values.
        params: Tensors to check (all must require a gradient).
        count (int): Number of coordinates to check.
        perturbation (float): Central difference step h.
        tolerance (float): Maximum allowed relative error.
        seed (int): Seed for coordinate selection.

    Returns:
        GradCheckReport: Per-coordinate results.
    """
    named = (
        dict(params)
        if isinstance(params, Mapping)
        else {t.name or f"param{i}": t for i, t in enumerate(params)}
    )
    with ComputationRecord() as record:
        loss = fn()
    grads = backward(record, loss)
    analytic = {
        name: grads.get(t, np.zeros_like(t.data)).astype(np.float64)
        for name, t in named.items()
    }

    names = list(named)
    sizes = np.array([named[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    order = rng.permutation(total)[: max(count * 4, count)]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    originals = {n: t.data for n, t in named.items()}
    report = GradCheckReport(tolerance=tolerance)
    try:
        with precision(np.float64):
            for n, t in named.items():
                t.data = originals[n].astype(np.float64)

            def central(tensor: Tensor, flat: int, h: float) -> float:
                base = tensor.data.flat[flat]
                tensor.data.flat[flat] = base + h
                plus = fn().item()
                tensor.data.flat[flat] = base - h
                minus = fn().item()
                tensor.data.flat[flat] = base
                return (plus - minus) / (2.0 * h)

            for coord in order:
                if len(report.entries) >= count:
                    break
                which = int(np.searchsorted(offsets, coord, side="right") - 1)
                name = names[which]
                flat = int(coord - offsets[which])
                tensor = named[name]
                numeric = central(tensor, flat, perturbation)
                refined = central(tensor, flat, perturbation / 2.0)
                if relative_error(numeric, refined) > tolerance / 2.0:
                    report.skipped_kinks += 1
                    continue
                a = float(analytic[name].flat[flat])
                report.entries.append(
                    GradCheckEntry(name, flat, a, numeric, relative_error(a, numeric))
                )
    finally:
        for n, t in named.items():
            t.data = originals[n]

    logger.debug(
        f"gradient check: {len(report.entries)} coords, max error "
        f"{report.max_error:.2e}, {report.skipped_kinks} kinks skipped"
    )
    return report
