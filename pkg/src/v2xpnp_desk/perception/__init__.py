"""
Pillar features, anchors, rotated box geometry and head decoding.
"""

from v2xpnp_desk.perception.anchors import (
    AnchorGrid,
    AnchorTargets,
    assign_anchors,
    build_anchor_grid,
    decode_boxes,
    encode_boxes,
)
from v2xpnp_desk.perception.decode import decode_detections, decode_trajectories
from v2xpnp_desk.perception.geometry import nms, rotated_iou, rotated_iou_matrix
from v2xpnp_desk.perception.io import DetectionRecord, read_detections, write_detections
from v2xpnp_desk.perception.pillars import (
    PillarEncoder,
    assign_pillars,
    bev_downsample,
    pillar_extract,
)
from v2xpnp_desk.perception.warp import warp_bev

__all__ = [
    "AnchorGrid",
    "AnchorTargets",
    "DetectionRecord",
    "PillarEncoder",
    "assign_anchors",
    "assign_pillars",
    "bev_downsample",
    "build_anchor_grid",
    "decode_boxes",
    "decode_detections",
    "decode_trajectories",
    "encode_boxes",
    "nms",
    "pillar_extract",
    "read_detections",
    "rotated_iou",
    "rotated_iou_matrix",
    "warp_bev",
]
