"""
V2X messages and payload size accounting.

Every payload maps frame stamps to content: one stamp for one-step messages,
one stamp per historical frame for multi-step messages.
"""

import abc
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.scenario.sensor import PointCloud
from v2xpnp_desk.shared.constants import BITS_PER_FLOAT, BOX_FLOATS, POINT_FLOATS
from v2xpnp_desk.shared.errors import ShapeError, StrategyError
from v2xpnp_desk.shared.types import CommStrategy, Detection, FusionStrategy


class Payload(abc.ABC):
    kind: str

    @abc.abstractmethod
    def stamps(self) -> list[int]:
        """Frames carried, oldest first."""

    @abc.abstractmethod
    def stamp_bits(self, stamp: int) -> int:
        """Size in bits of the content for one stamp."""

    @abc.abstractmethod
    def subset(self, stamps: Iterable[int]) -> "Payload":
        """Copy restricted to `stamps`."""

    def nonempty(self) -> "Payload | None":
        """Copy without zero-bit stamps, or None when nothing is left."""
        stamps = [s for s in self.stamps() if self.stamp_bits(s) > 0]
        if not stamps:
            return None
        return self if len(stamps) == len(self.stamps()) else self.subset(stamps)


@dataclass(frozen=True)
class RawPointsPayload(Payload):
    clouds: dict[int, PointCloud]
    kind: str = field(default="raw_points", init=False)

    def stamps(self) -> list[int]:
        return sorted(self.clouds)

    def stamp_bits(self, stamp: int) -> int:
        return len(self.clouds[stamp]) * POINT_FLOATS * BITS_PER_FLOAT

    def subset(self, stamps: Iterable[int]) -> "RawPointsPayload":
        return RawPointsPayload({s: self.clouds[s] for s in stamps})


@dataclass(frozen=True)
class BoxesPayload(Payload):
    detections: dict[int, list[Detection]]
    kind: str = field(default="boxes", init=False)

    def stamps(self) -> list[int]:
        return sorted(self.detections)

    def stamp_bits(self, stamp: int) -> int:
        return len(self.detections[stamp]) * BOX_FLOATS * BITS_PER_FLOAT

    def subset(self, stamps: Iterable[int]) -> "BoxesPayload":
        return BoxesPayload({s: self.detections[s] for s in stamps})


@dataclass(frozen=True)
class FeaturesPayload(Payload):
    """
    Compressed BEV maps of shape (H, W, ceil(C / r)) per stamp.
    """

    features: dict[int, Tensor]
    channels: int
    rate: int
    kind: str = field(default="features", init=False)

    def __post_init__(self) -> None:
        expected = math.ceil(self.channels / self.rate)
        for stamp, tensor in self.features.items():
            if tensor.ndim != 3 or tensor.shape[-1] != expected:
                raise ShapeError(
                    f"features at stamp {stamp} have shape {tensor.shape}, "
                    f"expected (H, W, {expected})"
                )

    def stamps(self) -> list[int]:
        return sorted(self.features)

    def stamp_bits(self, stamp: int) -> int:
        h, w, c = self.features[stamp].shape
        return h * w * c * BITS_PER_FLOAT

    def subset(self, stamps: Iterable[int]) -> "FeaturesPayload":
        return FeaturesPayload(
            {s: self.features[s] for s in stamps}, self.channels, self.rate
        )

    def stacked(self) -> Tensor:
        """(T, H, W, ceil(C / r)) in stamp order."""
        return ops.stack([self.features[s] for s in self.stamps()], axis=0)


EXPECTED_PAYLOAD: dict[FusionStrategy, type[Payload]] = {
    FusionStrategy.EARLY: RawPointsPayload,
    FusionStrategy.LATE: BoxesPayload,
    FusionStrategy.INTERMEDIATE_ONE_STEP: FeaturesPayload,
    FusionStrategy.INTERMEDIATE_MULTI_STEP: FeaturesPayload,
}


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    strategy: FusionStrategy
    sent_frame: int
    payload: Payload

    def __post_init__(self) -> None:
        expected = EXPECTED_PAYLOAD.get(self.strategy)
        if expected is None:
            raise StrategyError(f"strategy {self.strategy} does not communicate")
        if not isinstance(self.payload, expected):
            raise StrategyError(
                f"{self.strategy} expects {expected.__name__}, "
                f"got {type(self.payload).__name__}"
            )
        empty = [s for s in self.stamps if self.payload.stamp_bits(s) == 0]
        if not self.stamps or empty:
            raise StrategyError(f"message carries no data for stamps {empty}")
        one_step = self.strategy.comm_strategy is CommStrategy.ONE_STEP
        if one_step and len(self.stamps) != 1:
            raise StrategyError("one-step messages carry exactly one stamp")

    @property
    def stamps(self) -> list[int]:
        return self.payload.stamps()

    def restricted(self, stamps: Iterable[int]) -> "Message":
        return Message(
            self.sender,
            self.receiver,
            self.strategy,
            self.sent_frame,
            self.payload.subset(stamps),
        )


def payload_size(message: Message) -> int:
    """
    Bits on the wire, summed over stamps:
    features H*W*ceil(C/r)*32, boxes count*9*32, points count*4*32.
    """
    return sum(message.payload.stamp_bits(s) for s in message.stamps)
