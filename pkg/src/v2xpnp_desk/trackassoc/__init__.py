"""
Sequential annotation processing: a multi-agent spatio-temporal graph,
global track ids from its connected components and consensus boxes.
"""

from collections.abc import Iterable

from v2xpnp_desk.shared.constants import CROSS_AGENT_IOU
from v2xpnp_desk.shared.types import Annotation, TrackedAnnotation
from v2xpnp_desk.trackassoc.consensus import (
    assign_track_ids,
    consensus_refine,
    tracked_annotations,
)
from v2xpnp_desk.trackassoc.graph import AnnotationNode, TrackGraph, build_track_graph
from v2xpnp_desk.trackassoc.io import read_annotations, write_annotations


def associate(
    annotations: Iterable[Annotation],
    iou_threshold: float = CROSS_AGENT_IOU,
    temporal_iou_fallback: float | None = None,
) -> list[TrackedAnnotation]:
    """Graph, components and consensus in one call."""
    graph = build_track_graph(annotations, iou_threshold, temporal_iou_fallback)
    ids = assign_track_ids(graph)
    return tracked_annotations(graph, ids, consensus_refine(graph, ids))


__all__ = [
    "CROSS_AGENT_IOU",
    "AnnotationNode",
    "TrackGraph",
    "assign_track_ids",
    "associate",
    "build_track_graph",
    "consensus_refine",
    "read_annotations",
    "tracked_annotations",
    "write_annotations",
]
