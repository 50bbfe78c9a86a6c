"""
Global track ids from connected components, and consensus boxes.
"""

import logging
from collections import defaultdict

import numpy as np
from scipy.sparse import coo_array
from scipy.sparse.csgraph import connected_components

from v2xpnp_desk.shared.types import BoxParams, TrackedAnnotation
from v2xpnp_desk.shared.utils import wrap_angle
from v2xpnp_desk.trackassoc.graph import TrackGraph

logger = logging.getLogger(__name__)


def assign_track_ids(graph: TrackGraph) -> np.ndarray:
    """
    Global id per node: connected components, numbered by the first node
    of each component in node order.

    Returns:
        np.ndarray: (N,) int64 ids in 0 .. components-1.
    """
    n = len(graph)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.array(graph.edges, dtype=np.int64).reshape(-1, 2)
    adjacency = coo_array(
        (np.ones(edges.shape[0]), (edges[:, 0], edges[:, 1])), shape=(n, n)
    )
    count, labels = connected_components(adjacency, directed=False)
    # Renumber by first appearance so ids do not depend on scipy internals
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(count, dtype=np.int64)
    relabel[order] = np.arange(count)
    logger.info(f"{count} global tracks from {n} annotations")
    return relabel[labels]


def consensus_refine(
    graph: TrackGraph, track_ids: np.ndarray
) -> dict[tuple[int, int], BoxParams]:
    """
    One world-frame box per (track, frame).

    Center is the mean over the agents that labelled the object in that
    frame, yaw their circular mean; size is the per-track median over every
    annotation, since object extents do not change.
    """
    track_ids = np.asarray(track_ids, dtype=np.int64)
    per_track: dict[int, list[int]] = defaultdict(list)
    per_frame: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, node in enumerate(graph.nodes):
        per_track[int(track_ids[i])].append(i)
        per_frame[(int(track_ids[i]), node.frame)].append(i)

    sizes = {
        tid: np.median(
            np.stack([graph.nodes[i].world_box[3:6] for i in members]), axis=0
        )
        for tid, members in per_track.items()
    }
    refined: dict[tuple[int, int], BoxParams] = {}
    for (tid, frame), members in sorted(per_frame.items()):
        boxes = np.stack([graph.nodes[i].world_box for i in members])
        center = boxes[:, :3].mean(axis=0)
        mean_sin, mean_cos = np.sin(boxes[:, 6]).mean(), np.cos(boxes[:, 6]).mean()
        yaw = float(wrap_angle(np.arctan2(mean_sin, mean_cos)))
        w, l, h = sizes[tid]  # noqa: E741
        refined[(tid, frame)] = (
            float(center[0]), float(center[1]), float(center[2]),
            float(w), float(l), float(h), yaw,
        )
    return refined


def tracked_annotations(
    graph: TrackGraph,
    track_ids: np.ndarray,
    refined: dict[tuple[int, int], BoxParams],
) -> list[TrackedAnnotation]:
    """Annotations in node order with their global id and consensus box."""
    out = []
    for node, tid in zip(graph.nodes, track_ids, strict=True):
        out.append(
            TrackedAnnotation(
                agent_id=node.agent_id,
                frame=node.frame,
                local_id=node.local_id,
                box=tuple(float(v) for v in node.box),  # type: ignore[arg-type]
                pose=node.pose,
                global_track_id=int(tid),
                refined_box=refined[(int(tid), node.frame)],
            )
        )
    return out
