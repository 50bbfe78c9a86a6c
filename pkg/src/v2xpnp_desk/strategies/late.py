"""
Late fusion: cross-agent box merging, a gated greedy tracker and the
decoupled predictor.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.fusion.mapfeat import gather_polylines
from v2xpnp_desk.fusion.predictor import DecoupledPredictor
from v2xpnp_desk.perception.geometry import nms
from v2xpnp_desk.shared.constants import (
    LATE_FUSION_NMS_IOU,
    MAP_POLYLINES_PER_CELL,
    TRACKER_GATE_M,
)
from v2xpnp_desk.shared.types import Detection, Pose, PredictedTrajectory, VectorMap
from v2xpnp_desk.shared.utils import transform_boxes

logger = logging.getLogger(__name__)


def move_detections(
    detections: Sequence[Detection], transform: Pose
) -> list[Detection]:
    """Apply a rigid transform to every detection's box."""
    if not detections:
        return []
    boxes = transform_boxes(np.array([d.box for d in detections]), transform)
    return [
        d.model_copy(update={"box": tuple(float(v) for v in box)})
        for d, box in zip(detections, boxes, strict=True)
    ]


def late_fusion_merge(
    per_agent_detections: Sequence[Sequence[Detection]],
    iou_threshold: float = LATE_FUSION_NMS_IOU,
) -> list[Detection]:
    """
    Union of every agent's ego-frame boxes, then NMS.

    Returns:
        list[Detection]: Survivors, highest confidence first.
    """
    merged = [d for detections in per_agent_detections for d in detections]
    if not merged:
        return []
    boxes = np.array([d.box for d in merged], dtype=np.float64)
    scores = np.array([d.confidence for d in merged], dtype=np.float64)
    keep = nms(boxes, scores, iou_threshold)
    return [merged[k] for k in keep]


# ====================================================================================
# Tracking
# ====================================================================================


@dataclass
class Track:
    """Centers by slot index; slots without an observation are absent."""

    centers: dict[int, np.ndarray] = field(default_factory=dict)
    detection: Detection | None = None

    @property
    def last_slot(self) -> int:
        return max(self.centers)

    def expected_center(self, slot: int) -> np.ndarray:
        """Constant-velocity guess from the two newest observations."""
        slots = sorted(self.centers)
        last = self.centers[slots[-1]]
        if len(slots) < 2:
            return last
        a, b = slots[-2], slots[-1]
        velocity = (self.centers[b] - self.centers[a]) / (b - a)
        return last + velocity * (slot - b)

    def history(self, slots: int) -> tuple[np.ndarray, np.ndarray]:
        """
        (slots, 2) centers and validity mask with interior gaps linearly
        interpolated; slots before the first observation stay masked.
        """
        positions = np.zeros((slots, 2))
        mask = np.zeros(slots, dtype=bool)
        observed = np.array(sorted(self.centers))
        points = np.array([self.centers[s] for s in observed])
        span = np.arange(observed[0], observed[-1] + 1)
        positions[span, 0] = np.interp(span, observed, points[:, 0])
        positions[span, 1] = np.interp(span, observed, points[:, 1])
        mask[span] = True
        return positions, mask


def track_detections(
    per_frame_detections: Sequence[Sequence[Detection]],
    gate_m: float = TRACKER_GATE_M,
) -> list[Track]:
    """
    Link per-frame detections (oldest first, one common frame) into tracks.

    Each frame, pairs of (track, detection) are taken greedily by distance
    between the detection center and the track's constant-velocity guess.
    A pair is accepted within the gate times the frame gap; tracks with a
    single observation have no velocity and get twice that gate. Unmatched
    detections open new tracks.

    Returns:
        list[Track]: Tracks whose newest observation is in the last frame,
            in the order of that frame's detections.
    """
    tracks: list[Track] = []
    for slot, detections in enumerate(per_frame_detections):
        centers = np.array([d.box[:2] for d in detections], dtype=np.float64)
        centers = centers.reshape(-1, 2)
        taken_tracks: set[int] = set()
        taken_dets: set[int] = set()
        if tracks and len(detections):
            guesses = np.array([t.expected_center(slot) for t in tracks])
            dist = np.linalg.norm(guesses[:, None, :] - centers[None, :, :], axis=-1)
            gaps = np.array([slot - t.last_slot for t in tracks], dtype=np.float64)
            single = np.array([len(t.centers) < 2 for t in tracks])
            gate = gate_m * gaps * np.where(single, 2.0, 1.0)
            ti, di = np.nonzero(dist <= gate[:, None])
            for k in np.lexsort((di, ti, dist[ti, di])):
                t, d = int(ti[k]), int(di[k])
                if t in taken_tracks or d in taken_dets:
                    continue
                taken_tracks.add(t)
                taken_dets.add(d)
                tracks[t].centers[slot] = centers[d]
                tracks[t].detection = detections[d]
        for d, det in enumerate(detections):
            if d not in taken_dets:
                tracks.append(Track({slot: centers[d]}, det))

    last = len(per_frame_detections) - 1
    current = [t for t in tracks if t.centers and t.last_slot == last]
    newest = per_frame_detections[last] if last >= 0 else []
    order = {id(d): i for i, d in enumerate(newest)}
    current.sort(key=lambda t: order[id(t.detection)])
    logger.debug(f"tracker: {len(tracks)} tracks, {len(current)} in the last frame")
    return current


def ideal_track_and_predict(
    per_frame_detections: Sequence[Sequence[Detection]],
    vector_map: VectorMap,
    ego_pose: Pose,
    predictor: DecoupledPredictor,
    gate_m: float = TRACKER_GATE_M,
    polylines: int = MAP_POLYLINES_PER_CELL,
    constant_velocity: bool = False,
) -> tuple[list[Detection], list[PredictedTrajectory]]:
    """
    Track, then predict six future centers for every object of the last frame.

    Args:
        per_frame_detections: Detections per history frame, oldest first, all
            in the ego frame at the last frame.
        vector_map (VectorMap): World map.
        ego_pose (Pose): Ego world pose at the last frame.
        predictor (DecoupledPredictor): Trajectory model.
        constant_velocity (bool): Use the predictor's baseline only.

    Returns:
        tuple: Last-frame detections and one trajectory per detection.
    """
    tracks = track_detections(per_frame_detections, gate_m)
    if not tracks:
        return [], []
    slots = len(per_frame_detections)
    histories = [t.history(slots) for t in tracks]
    history = np.stack([h[0] for h in histories])
    mask = np.stack([h[1] for h in histories])
    sites = history[:, -1, :]
    inputs, polyline_mask, _ = gather_polylines(vector_map, ego_pose, sites, polylines)
    offsets = predictor(history, mask, inputs, polyline_mask, constant_velocity).numpy()

    detections: list[Detection] = []
    trajectories: list[PredictedTrajectory] = []
    for track, site, steps in zip(tracks, sites, offsets, strict=True):
        assert track.detection is not None
        points = site + np.cumsum(steps.astype(np.float64), axis=0)
        detections.append(track.detection)
        trajectories.append(
            PredictedTrajectory(points=tuple((float(x), float(y)) for x, y in points))
        )
    return detections, trajectories
