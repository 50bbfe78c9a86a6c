"""
2D ray-cast LiDAR model.

Rays are cast at a fixed angular resolution against the BEV edges of every
object box; each ray returns its nearest hit, so objects behind others are
occluded.
"""

from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.shared.errors import ScenarioError
from v2xpnp_desk.shared.types import Pose, Scenario
from v2xpnp_desk.shared.utils import box_corners, local_to_world, world_to_local


@dataclass(frozen=True)
class PointCloud:
    """
    One sweep of one agent, in that agent's frame.

    Attributes:
        points: (N, 4) float64 x, y, z, intensity.
        object_ids: (N,) object hit by each point.
    """

    agent_id: int
    frame: int
    pose: Pose
    points: np.ndarray
    object_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def world_points(self) -> np.ndarray:
        """Points with xy expressed in world coordinates."""
        out = self.points.copy()
        if len(self):
            out[:, :2] = local_to_world(self.points[:, :2], self.pose)
        return out

    def visible_object_ids(self) -> set[int]:
        return {int(i) for i in np.unique(self.object_ids)}


def raycast(
    origin: Pose,
    boxes: np.ndarray,
    intensities: np.ndarray,
    max_range: float,
    angular_resolution_deg: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Cast rays from `origin` against world boxes.

    Args:
        origin (Pose): Sensor pose; ray angles are measured from its heading.
        boxes (np.ndarray): (M, 7) world boxes.
        intensities (np.ndarray): (M,) intensity per box.
        max_range (float): Maximum hit distance in meters.
        angular_resolution_deg (float): Angle between neighbouring rays.

    Returns:
        tuple[np.ndarray, np.ndarray]: (N, 4) world points and (N,) index of
        the box each point lies on.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    if boxes.shape[0] == 0:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int64)

    num_rays = int(round(360.0 / angular_resolution_deg))
    angles = origin[2] + np.arange(num_rays) * np.deg2rad(angular_resolution_deg)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=-1)  # (R, 2)
    p = np.array(origin[:2], dtype=np.float64)

    corners = box_corners(boxes)  # (M, 4, 2)
    q = corners.reshape(-1, 2)  # edge starts (E, 2)
    e = (np.roll(corners, -1, axis=1) - corners).reshape(-1, 2)  # edge vectors
    w = q - p

    # Solve p + t d = q + u e for every ray/edge pair
    denom = d[:, 0:1] * e[None, :, 1] - d[:, 1:2] * e[None, :, 0]  # (R, E)
    w_cross_e = w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]  # (E,)
    w_cross_d = w[None, :, 0] * d[:, 1:2] - w[None, :, 1] * d[:, 0:1]  # (R, E)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = w_cross_e[None, :] / denom
        u = w_cross_d / denom
    valid = (
        (np.abs(denom) > 1e-12)
        & (t > 1e-9)
        & (u >= 0.0)
        & (u <= 1.0)
        & (t <= max_range)
    )
    t = np.where(valid, t, np.inf)
    nearest = np.argmin(t, axis=1)
    t_hit = t[np.arange(num_rays), nearest]
    hit = np.isfinite(t_hit)

    box_index = nearest[hit] // 4
    xy = p + t_hit[hit, None] * d[hit]
    z = boxes[box_index, 2]
    points = np.column_stack([xy, z, intensities[box_index]])
    return points, box_index.astype(np.int64)


def sense(scenario: Scenario, agent_id: int, frame: int) -> PointCloud:
    """
    Point cloud of `agent_id` at `frame` in the agent frame.

    The agent's own body is not sensed.

    Raises:
        ScenarioError: If the frame is outside the scenario.
    """
    if not 0 <= frame < scenario.num_frames:
        raise ScenarioError(f"frame {frame} outside [0, {scenario.num_frames})")
    agent = scenario.agent(agent_id)
    pose = agent.pose(frame)

    tracks = [
        track
        for track in scenario.objects
        if track.valid[frame] and track.object_id != agent.object_id
    ]
    boxes = np.array([track.boxes[frame] for track in tracks]).reshape(-1, 7)
    intensities = np.array([track.intensity for track in tracks])
    ids = np.array([track.object_id for track in tracks], dtype=np.int64)

    world, index = raycast(
        pose,
        boxes,
        intensities,
        scenario.config.sensor_range,
        scenario.config.angular_resolution_deg,
    )
    local = world.copy()
    if len(local):
        local[:, :2] = world_to_local(world[:, :2], pose)
    return PointCloud(
        agent_id=agent_id,
        frame=frame,
        pose=pose,
        points=local,
        object_ids=ids[index] if len(index) else np.zeros(0, dtype=np.int64),
    )
