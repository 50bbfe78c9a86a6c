"""
V2X communication: graph, messages, channel model and logs.
"""

from v2xpnp_desk.comms.channel import (
    DeliveredMessage,
    TransmitResult,
    apply_pose_noise,
    reanchor,
    stale_frames,
    transmission_delay_ms,
    transmit,
)
from v2xpnp_desk.comms.graph import V2XGraph, build_v2x_graph
from v2xpnp_desk.comms.log import read_comm_log, write_comm_log
from v2xpnp_desk.comms.messages import (
    BoxesPayload,
    FeaturesPayload,
    Message,
    RawPointsPayload,
    payload_size,
)

__all__ = [
    "BoxesPayload",
    "DeliveredMessage",
    "FeaturesPayload",
    "Message",
    "RawPointsPayload",
    "TransmitResult",
    "V2XGraph",
    "apply_pose_noise",
    "build_v2x_graph",
    "payload_size",
    "read_comm_log",
    "reanchor",
    "stale_frames",
    "transmission_delay_ms",
    "transmit",
    "write_comm_log",
]
