"""
Channel model: transmission delay, staleness, message drops and pose noise.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.comms.graph import V2XGraph
from v2xpnp_desk.comms.messages import Message
from v2xpnp_desk.shared.errors import ConfigurationError
from v2xpnp_desk.shared.types import ChannelModel, CommLogEntry, Pose
from v2xpnp_desk.shared.utils import local_to_world, world_to_local

logger = logging.getLogger(__name__)


def transmission_delay_ms(bits: int, channel: ChannelModel) -> float:
    """bits / rate plus the fixed extra latency, in milliseconds."""
    return bits * 1000.0 / (channel.rate_mbps * 1e6) + channel.extra_latency_ms


def stale_frames(delay_ms: float, frame_interval_s: float) -> int:
    """Whole frames a delay spans, rounding half up: 250 ms at 2 Hz is 1."""
    if delay_ms < 0:
        raise ConfigurationError(f"negative delay {delay_ms}")
    return int(math.floor(delay_ms / (frame_interval_s * 1000.0) + 0.5))


def apply_pose_noise(
    pose: Pose,
    sigma_translation: float,
    sigma_rotation_deg: float,
    rng: np.random.Generator,
) -> Pose:
    """
    Perturb a pose with zero-mean Gaussian noise on x, y and yaw.

    Three normals are drawn even when both sigmas are zero, so runs with
    different noise levels consume the generator identically.

    Raises:
        ConfigurationError: If a sigma is negative.
    """
    if sigma_translation < 0 or sigma_rotation_deg < 0:
        raise ConfigurationError("pose noise standard deviations must be >= 0")
    dx, dy = rng.normal(0.0, sigma_translation, size=2)
    dyaw = rng.normal(0.0, math.radians(sigma_rotation_deg))
    return (pose[0] + float(dx), pose[1] + float(dy), pose[2] + float(dyaw))


def reanchor(points: np.ndarray, true_pose: Pose, noisy_pose: Pose) -> np.ndarray:
    """
    Move world xy points (N, >=2) rigidly as if their owner were at
    `noisy_pose` instead of `true_pose`.
    """
    out = np.array(points, dtype=np.float64, copy=True)
    if out.shape[0] == 0:
        return out
    out[:, :2] = local_to_world(world_to_local(out[:, :2], true_pose), noisy_pose)
    return out


@dataclass(frozen=True)
class DeliveredMessage:
    message: Message
    delay_ms: float
    stale_frames: int


@dataclass
class TransmitResult:
    delivered: list[DeliveredMessage] = field(default_factory=list)
    log: list[CommLogEntry] = field(default_factory=list)

    @property
    def bits(self) -> int:
        return sum(entry.bits for entry in self.log)


def transmit(
    messages: Sequence[Message],
    channel: ChannelModel,
    rng: np.random.Generator,
    frame_interval_s: float,
    graphs: Mapping[int, V2XGraph] | None = None,
) -> TransmitResult:
    """
    Send messages over the channel.

    Each stamp is one transmission. Stamps whose frame graph lacks the
    sender->receiver edge are never sent. Every sent stamp draws one uniform
    number and is dropped when it falls below the drop probability. Delay
    accumulates over the sent stamps of a message.
    """
    result = TransmitResult()
    for message in messages:
        stamps = message.stamps
        if graphs is not None:
            sender, receiver = message.sender, message.receiver
            stamps = [
                s
                for s in stamps
                if s not in graphs or graphs[s].has_edge(sender, receiver)
            ]
        delays: list[float] = []
        kept: list[int] = []
        dropped: list[bool] = []
        for stamp in stamps:
            bits = message.payload.stamp_bits(stamp)
            delays.append(transmission_delay_ms(bits, channel))
            lost = bool(rng.random() < channel.drop_probability)
            dropped.append(lost)
            if not lost:
                kept.append(stamp)

        total_delay = float(sum(delays))
        stale = stale_frames(total_delay, frame_interval_s)
        for stamp, delay, lost in zip(stamps, delays, dropped, strict=True):
            result.log.append(
                CommLogEntry(
                    frame=message.sent_frame,
                    sender=message.sender,
                    receiver=message.receiver,
                    strategy=message.strategy,
                    payload_kind=message.payload.kind,
                    stamp=stamp,
                    bits=message.payload.stamp_bits(stamp),
                    delay_ms=delay,
                    stale_frames=stale,
                    dropped=lost,
                )
            )
        if kept:
            result.delivered.append(
                DeliveredMessage(message.restricted(kept), total_delay, stale)
            )
        else:
            logger.debug(
                f"message {message.sender}->{message.receiver} at frame "
                f"{message.sent_frame} lost entirely"
            )
    return result
