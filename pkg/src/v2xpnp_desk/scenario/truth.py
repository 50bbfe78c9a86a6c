"""
Ground truth queries: current boxes, future centers, visible histories and
per-agent annotations.
"""

from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.scenario.sensor import sense
from v2xpnp_desk.shared.constants import (
    EVAL_X_RANGE,
    EVAL_Y_RANGE,
    HISTORY_FRAMES,
    PREDICTION_HORIZON,
)
from v2xpnp_desk.shared.errors import ScenarioError
from v2xpnp_desk.shared.types import Annotation, Scenario
from v2xpnp_desk.shared.utils import relative_pose, transform_boxes, world_to_local


@dataclass(frozen=True)
class GroundTruthFrame:
    """
    Objects inside the evaluation window of one ego at one frame.

    Attributes:
        boxes: (N, 7) boxes in the ego frame at `frame`.
        futures: (N, H, 2) future centers in the same frame.
        future_mask: (N, H) True where the future step exists.
    """

    frame: int
    ego_id: int
    object_ids: np.ndarray
    boxes: np.ndarray
    futures: np.ndarray
    future_mask: np.ndarray

    def __len__(self) -> int:
        return int(self.object_ids.shape[0])


@dataclass(frozen=True)
class VisibleHistory:
    """
    Past centers of objects the agent saw at least once.

    Attributes:
        positions: (N, T) x 2 centers in the agent frame at the query frame,
            oldest first; zero where unobserved.
        mask: (N, T) True where the object returned at least one point.
    """

    object_ids: np.ndarray
    positions: np.ndarray
    mask: np.ndarray


def _check_frame(scenario: Scenario, frame: int) -> None:
    if not 0 <= frame < scenario.num_frames:
        raise ScenarioError(f"frame {frame} outside [0, {scenario.num_frames})")


def in_eval_window(xy: np.ndarray) -> np.ndarray:
    """Inclusive window test for (N, 2) ego-frame centers."""
    xy = np.asarray(xy).reshape(-1, 2)
    return (
        (xy[:, 0] >= EVAL_X_RANGE[0])
        & (xy[:, 0] <= EVAL_X_RANGE[1])
        & (xy[:, 1] >= EVAL_Y_RANGE[0])
        & (xy[:, 1] <= EVAL_Y_RANGE[1])
    )


def ground_truth(
    scenario: Scenario,
    ego_id: int,
    frame: int,
    horizon: int = PREDICTION_HORIZON,
) -> GroundTruthFrame:
    """
    Boxes and future centers of every valid object in the ego's window.

    The ego's own body is excluded. Futures past the end of the episode or at
    frames where the object is invalid are masked.

    Raises:
        ScenarioError: If the frame is outside the scenario.
    """
    _check_frame(scenario, frame)
    ego = scenario.agent(ego_id)
    ego_pose = ego.pose(frame)

    ids, boxes, futures, masks = [], [], [], []
    for track in scenario.objects:
        if track.object_id == ego.object_id or not track.valid[frame]:
            continue
        local = transform_boxes(
            np.array([track.boxes[frame]]), relative_pose((0.0, 0.0, 0.0), ego_pose)
        )[0]
        if not in_eval_window(local[:2])[0]:
            continue
        future = np.zeros((horizon, 2))
        mask = np.zeros(horizon, dtype=bool)
        for k in range(1, horizon + 1):
            f = frame + k
            if f < scenario.num_frames and track.valid[f]:
                center = np.array([track.boxes[f][:2]])
                future[k - 1] = world_to_local(center, ego_pose)[0]
                mask[k - 1] = True
        ids.append(track.object_id)
        boxes.append(local)
        futures.append(future)
        masks.append(mask)

    return GroundTruthFrame(
        frame=frame,
        ego_id=ego_id,
        object_ids=np.array(ids, dtype=np.int64),
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 7),
        futures=np.array(futures, dtype=np.float64).reshape(-1, horizon, 2),
        future_mask=np.array(masks, dtype=bool).reshape(-1, horizon),
    )


def visible_history(
    scenario: Scenario,
    agent_id: int,
    frame: int,
    history: int = HISTORY_FRAMES,
) -> VisibleHistory:
    """
    Centers of objects over frames frame-history+1 .. frame as seen by one
    agent, expressed in the agent frame at `frame`.
    """
    _check_frame(scenario, frame)
    agent = scenario.agent(agent_id)
    pose = agent.pose(frame)
    first = frame - history + 1

    seen: dict[int, np.ndarray] = {}
    for k, f in enumerate(range(first, frame + 1)):
        if f < 0:
            continue
        for object_id in sense(scenario, agent_id, f).visible_object_ids():
            seen.setdefault(object_id, np.zeros(history, dtype=bool))[k] = True

    ids = sorted(seen)
    positions = np.zeros((len(ids), history, 2))
    mask = np.zeros((len(ids), history), dtype=bool)
    for i, object_id in enumerate(ids):
        track = scenario.object(object_id)
        mask[i] = seen[object_id]
        for k in np.flatnonzero(mask[i]):
            f = first + int(k)
            positions[i, k] = world_to_local(np.array([track.boxes[f][:2]]), pose)[0]
    return VisibleHistory(np.array(ids, dtype=np.int64), positions, mask)


def annotate(scenario: Scenario, agent_id: int, frame: int) -> list[Annotation]:
    """
    Boxes an agent would label at `frame`: every object returning at least
    one point, in the agent frame, keyed by object id as local track id.
    """
    cloud = sense(scenario, agent_id, frame)
    pose = scenario.agent(agent_id).pose(frame)
    to_local = relative_pose((0.0, 0.0, 0.0), pose)
    records = []
    for object_id in sorted(cloud.visible_object_ids()):
        world_box = np.array([scenario.object(object_id).boxes[frame]])
        box = transform_boxes(world_box, to_local)[0]
        records.append(
            Annotation(
                agent_id=agent_id,
                frame=frame,
                local_id=object_id,
                box=tuple(float(v) for v in box),  # type: ignore[arg-type]
                pose=pose,
            )
        )
    return records
