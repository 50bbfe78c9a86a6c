"""
Multi-agent spatio-temporal annotation graph.

Nodes are single-agent box annotations. Two kinds of undirected edges link
nodes that show the same object:

    temporal     same agent, frames t and t+1, same local track id
    cross-agent  same frame, different agents, world-frame IoU >= threshold

Connected components of the graph are global tracks.
"""

import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.perception.geometry import rotated_iou_matrix
from v2xpnp_desk.shared.constants import CROSS_AGENT_IOU
from v2xpnp_desk.shared.errors import GraphError
from v2xpnp_desk.shared.types import Annotation, Pose
from v2xpnp_desk.shared.utils import relative_pose, transform_boxes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnotationNode:
    agent_id: int
    frame: int
    local_id: int | None
    box: np.ndarray
    pose: Pose
    world_box: np.ndarray

    @property
    def key(self) -> tuple[int, int, int]:
        local_id = -1 if self.local_id is None else self.local_id
        return (self.agent_id, self.frame, local_id)


@dataclass
class TrackGraph:
    """Nodes in deterministic (agent, frame, local id) order; edges as (i, j), i < j."""

    nodes: list[AnnotationNode] = field(default_factory=list)
    temporal_edges: set[tuple[int, int]] = field(default_factory=set)
    cross_edges: set[tuple[int, int]] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.temporal_edges | self.cross_edges)

    def add_edge(self, i: int, j: int, temporal: bool) -> None:
        edge = (min(i, j), max(i, j))
        (self.temporal_edges if temporal else self.cross_edges).add(edge)


def _node(annotation: Annotation) -> AnnotationNode:
    if annotation.pose is None:
        raise GraphError(
            f"annotation of agent {annotation.agent_id} at frame {annotation.frame} "
            f"has no pose; boxes cannot be placed in the world frame"
        )
    box = np.asarray(annotation.box, dtype=np.float64)
    to_world = relative_pose(annotation.pose, (0.0, 0.0, 0.0))
    world = transform_boxes(box[None], to_world)[0]
    return AnnotationNode(
        annotation.agent_id,
        annotation.frame,
        annotation.local_id,
        box,
        annotation.pose,
        world,
    )


def _link_by_iou(
    graph: TrackGraph,
    left: Sequence[int],
    right: Sequence[int],
    threshold: float,
    temporal: bool,
    same_agent_allowed: bool,
) -> None:
    if not left or not right:
        return
    boxes_l = np.stack([graph.nodes[i].world_box for i in left])
    boxes_r = np.stack([graph.nodes[j].world_box for j in right])
    iou = rotated_iou_matrix(boxes_l, boxes_r)
    for a, b in zip(*np.nonzero(iou >= threshold), strict=True):
        i, j = left[a], right[b]
        if i == j:
            continue
        same_agent = graph.nodes[i].agent_id == graph.nodes[j].agent_id
        if same_agent and not same_agent_allowed:
            continue
        graph.add_edge(i, j, temporal)


def build_track_graph(
    annotations: Iterable[Annotation],
    iou_threshold: float = CROSS_AGENT_IOU,
    temporal_iou_fallback: float | None = None,
) -> TrackGraph:
    """
    Build the annotation graph.

    Args:
        annotations (Iterable[Annotation]): Boxes in each annotating agent's frame.
        iou_threshold (float): Minimum world-frame IoU for a cross-agent edge.
        temporal_iou_fallback (float | None): Link id-free annotations of one
            agent in consecutive frames at this IoU; None disables it.

    Raises:
        GraphError: If an annotation has no pose or a (agent, frame, local id)
            key repeats.
    """
    nodes = sorted((_node(a) for a in annotations), key=lambda n: n.key)
    graph = TrackGraph(nodes=nodes)

    index: dict[tuple[int, int, int], int] = {}
    for i, node in enumerate(nodes):
        if node.local_id is None:
            continue
        if node.key in index:
            raise GraphError(
                f"duplicate annotation for agent/frame/local id {node.key}"
            )
        index[node.key] = i

    by_frame: dict[int, list[int]] = defaultdict(list)
    anonymous: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, node in enumerate(nodes):
        by_frame[node.frame].append(i)
        if node.local_id is None:
            anonymous[(node.agent_id, node.frame)].append(i)
        else:
            nxt = index.get((node.agent_id, node.frame + 1, node.local_id))
            if nxt is not None:
                graph.add_edge(i, nxt, temporal=True)

    if temporal_iou_fallback is not None:
        for (agent_id, frame), members in sorted(anonymous.items()):
            following = anonymous.get((agent_id, frame + 1), [])
            _link_by_iou(
                graph, members, following, temporal_iou_fallback,
                temporal=True, same_agent_allowed=True,
            )

    for frame in sorted(by_frame):
        members = by_frame[frame]
        _link_by_iou(
            graph,
            members,
            members,
            iou_threshold,
            temporal=False,
            same_agent_allowed=False,
        )

    logger.info(
        f"track graph: {len(nodes)} nodes, {len(graph.temporal_edges)} temporal and "
        f"{len(graph.cross_edges)} cross-agent edges"
    )
    return graph
