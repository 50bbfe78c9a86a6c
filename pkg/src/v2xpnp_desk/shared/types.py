"""
Type definitions and Pydantic models for V2XPnP Desk.
"""

import math
from enum import StrEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from v2xpnp_desk.shared.constants import (
    ANCHOR_HEIGHT_M,
    ANCHOR_LENGTH_M,
    ANCHOR_WIDTH_M,
    AP_IOU_THRESHOLD,
    BEV_STRIDE,
    COMMUNICATION_RANGE_M,
    DEFAULT_NUM_FRAMES,
    DETECTION_NMS_IOU,
    DETECTION_SCORE_THRESHOLD,
    EPA_FALSE_POSITIVE_PENALTY,
    EPA_FDE_THRESHOLD_M,
    EVAL_X_RANGE,
    EVAL_Y_RANGE,
    FRAME_INTERVAL_S,
    LATE_FUSION_NMS_IOU,
    MAP_POLYLINES_PER_CELL,
    MAX_POINTS_PER_VOXEL,
    MAX_VOXELS,
    MISS_RATE_THRESHOLD_M,
    SENSOR_ANGULAR_RESOLUTION_DEG,
    SENSOR_RANGE_M,
    TRACKER_GATE_M,
    VOXEL_SIZE_M,
    WAYPOINTS_PER_POLYLINE,
    WINDOW_SIZES,
)

Pose = tuple[float, float, float]
BoxParams = tuple[float, float, float, float, float, float, float]

# ====================================================================================
# Enumerations
# ====================================================================================


class AgentKind(StrEnum):
    VEHICLE = "vehicle"
    INFRASTRUCTURE = "infrastructure"

    @property
    def letter(self) -> str:
        """Relation-label letter (V or I)."""
        return "V" if self is AgentKind.VEHICLE else "I"


class MotionModel(StrEnum):
    CONSTANT_VELOCITY = "constant_velocity"
    CONSTANT_TURN_RATE = "constant_turn_rate"
    STOP_AND_GO = "stop_and_go"
    STATIC = "static"


class CommStrategy(StrEnum):
    ONE_STEP = "one_step"
    MULTI_STEP = "multi_step"


class FusionStrategy(StrEnum):
    NO_FUSION = "no_fusion"
    EARLY = "early"
    LATE = "late"
    INTERMEDIATE_ONE_STEP = "intermediate_one_step"
    INTERMEDIATE_MULTI_STEP = "intermediate_multi_step"

    @property
    def comm_strategy(self) -> CommStrategy | None:
        """How many frames each message carries; None when nothing is sent."""
        match self:
            case FusionStrategy.NO_FUSION:
                return None
            case FusionStrategy.INTERMEDIATE_ONE_STEP:
                return CommStrategy.ONE_STEP
            case _:
                return CommStrategy.MULTI_STEP


# ====================================================================================
# Scenario Models
# ====================================================================================


class Agent(BaseModel):
    """
    A connected agent with a sensor: a vehicle (CAV) or an infrastructure unit.
    """

    model_config = ConfigDict(frozen=True)

    agent_id: int = Field(..., ge=0)
    kind: AgentKind
    poses: tuple[Pose, ...] = Field(..., description="World pose per frame")
    sensor_height: float = Field(..., gt=0.0)
    object_id: int | None = Field(
        None, description="Object track of the agent's own body (vehicles only)"
    )

    def pose(self, frame: int) -> Pose:
        """World pose at `frame`."""
        return self.poses[frame]


class ObjectTrack(BaseModel):
    """
    Ground-truth trajectory of one object over the whole episode.
    """

    model_config = ConfigDict(frozen=True)

    object_id: int = Field(..., ge=0)
    class_name: str = "vehicle"
    motion_model: MotionModel
    static: bool = False
    intensity: float = Field(0.5, ge=0.0, le=1.0)
    boxes: tuple[BoxParams, ...] = Field(..., description="World box per frame")
    valid: tuple[bool, ...]

    @model_validator(mode="after")
    def _check_lengths(self) -> "ObjectTrack":
        if len(self.boxes) != len(self.valid):
            raise ValueError("boxes and valid must have one entry per frame")
        if not any(self.valid):
            raise ValueError(f"object {self.object_id} is never valid")
        return self

    def boxes_array(self) -> np.ndarray:
        """(T, 7) float64 array of world boxes."""
        return np.asarray(self.boxes, dtype=np.float64).reshape(-1, 7)


class Polyline(BaseModel):
    """
    A lane segment of equally spaced waypoints in world coordinates.
    """

    model_config = ConfigDict(frozen=True)

    points: tuple[tuple[float, float], ...]
    lane_type: int = Field(0, ge=0, description="0 = through lane, 1 = crossing")

    @model_validator(mode="after")
    def _check_waypoints(self) -> "Polyline":
        if len(self.points) != WAYPOINTS_PER_POLYLINE:
            raise ValueError(
                f"polyline has {len(self.points)} waypoints, "
                f"expected {WAYPOINTS_PER_POLYLINE}"
            )
        return self


class VectorMap(BaseModel):
    model_config = ConfigDict(frozen=True)

    polylines: tuple[Polyline, ...] = ()

    def __len__(self) -> int:
        return len(self.polylines)


class ScenarioConfig(BaseModel):
    """
    Parameters of the synthetic scenario generator.
    """

    model_config = ConfigDict(extra="forbid")

    num_frames: int = Field(DEFAULT_NUM_FRAMES, ge=0)
    frame_interval_s: float = Field(FRAME_INTERVAL_S, gt=0.0)
    num_vehicles: int = Field(2, ge=0, description="Connected vehicles incl. ego")
    num_infrastructure: int = Field(1, ge=0)
    num_background_objects: int = Field(12, ge=0)
    world_extent: tuple[float, float, float, float] = Field(
        (-120.0, 120.0, -70.0, 70.0), description="x_min, x_max, y_min, y_max"
    )
    ego_speed: float = Field(4.0, ge=0.0)
    max_speed: float = Field(12.0, gt=0.0)
    static_fraction: float = Field(0.2, ge=0.0, le=1.0)
    sensor_range: float = Field(SENSOR_RANGE_M, gt=0.0)
    angular_resolution_deg: float = Field(SENSOR_ANGULAR_RESOLUTION_DEG, gt=0.0)
    occlusion_stressor: bool = True

    @model_validator(mode="after")
    def _check_extent(self) -> "ScenarioConfig":
        x_min, x_max, y_min, y_max = self.world_extent
        if not (
            x_min <= EVAL_X_RANGE[0]
            and x_max >= EVAL_X_RANGE[1]
            and y_min <= EVAL_Y_RANGE[0]
            and y_max >= EVAL_Y_RANGE[1]
        ):
            raise ValueError("world_extent must cover the evaluation window")
        if self.ego_speed > self.max_speed:
            raise ValueError("ego_speed exceeds max_speed")
        return self


class Scenario(BaseModel):
    """
    A complete synthetic episode. Pure data: serializable and comparable.
    """

    model_config = ConfigDict(frozen=True)

    seed: int
    config: ScenarioConfig
    agents: tuple[Agent, ...]
    objects: tuple[ObjectTrack, ...]
    vector_map: VectorMap
    occluded_object_ids: tuple[int, ...] = Field(
        (), description="Objects placed to be hidden from the ego"
    )

    @property
    def num_frames(self) -> int:
        return self.config.num_frames

    @property
    def frame_interval_s(self) -> float:
        return self.config.frame_interval_s

    def agent(self, agent_id: int) -> Agent:
        for agent in self.agents:
            if agent.agent_id == agent_id:
                return agent
        raise KeyError(f"unknown agent {agent_id}")

    def object(self, object_id: int) -> ObjectTrack:
        for track in self.objects:
            if track.object_id == object_id:
                return track
        raise KeyError(f"unknown object {object_id}")


# ====================================================================================
# Perception and Prediction Outputs
# ====================================================================================


class Detection(BaseModel):
    """
    A 3D box hypothesis in the ego frame of the frame it belongs to.
    """

    box: BoxParams
    confidence: float = Field(..., ge=0.0, le=1.0)
    source_agent: int = Field(..., ge=0)
    anchor_index: int | None = Field(
        None, description="Anchor the box was decoded from"
    )

    def box_array(self) -> np.ndarray:
        return np.asarray(self.box, dtype=np.float64)


class PredictedTrajectory(BaseModel):
    """
    Future centers at t+1 .. t+6, owned by one detection.
    """

    points: tuple[tuple[float, float], ...] = Field(..., min_length=1)

    def points_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64).reshape(-1, 2)


class CommLogEntry(BaseModel):
    """
    One transmission attempt of one stamp of one message.
    """

    frame: int
    sender: int
    receiver: int
    strategy: FusionStrategy
    payload_kind: str
    stamp: int
    bits: int = Field(..., ge=0)
    delay_ms: float = Field(..., ge=0.0)
    stale_frames: int = Field(0, ge=0)
    dropped: bool = False


# ====================================================================================
# Configuration Models
# ====================================================================================


class ChannelModel(BaseModel):
    """
    Link model shared by every V2X message of a run.
    """

    model_config = ConfigDict(extra="forbid")

    rate_mbps: float = Field(26.9, gt=0.0)
    extra_latency_ms: float = Field(0.0, ge=0.0)
    drop_probability: float = Field(0.0, ge=0.0, le=1.0)
    pose_noise_translation_m: float = Field(0.0, ge=0.0)
    pose_noise_rotation_deg: float = Field(0.0, ge=0.0)


class PillarConfig(BaseModel):
    """
    Pillar grid and BEV downsampling parameters.
    """

    model_config = ConfigDict(extra="forbid")

    voxel_size: float = Field(VOXEL_SIZE_M, gt=0.0)
    max_points_per_voxel: int = Field(MAX_POINTS_PER_VOXEL, ge=1)
    max_voxels: int = Field(MAX_VOXELS, ge=1)
    x_range: tuple[float, float] = EVAL_X_RANGE
    y_range: tuple[float, float] = EVAL_Y_RANGE
    bev_stride: int = Field(BEV_STRIDE, ge=1)
    shuffle_seed: int = 0

    @model_validator(mode="after")
    def _check_grid(self) -> "PillarConfig":
        for lo, hi in (self.x_range, self.y_range):
            cells = (hi - lo) / self.voxel_size
            if hi <= lo or abs(cells - round(cells)) > 1e-6:
                raise ValueError(
                    f"extent [{lo}, {hi}] is not a multiple of voxel_size "
                    f"{self.voxel_size}"
                )
        nx, ny = self.grid_shape
        if nx % self.bev_stride or ny % self.bev_stride:
            raise ValueError("pillar grid is not divisible by bev_stride")
        return self

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Pillar grid (cells along x, cells along y)."""
        nx = round((self.x_range[1] - self.x_range[0]) / self.voxel_size)
        ny = round((self.y_range[1] - self.y_range[0]) / self.voxel_size)
        return nx, ny

    @property
    def bev_shape(self) -> tuple[int, int]:
        nx, ny = self.grid_shape
        return nx // self.bev_stride, ny // self.bev_stride

    @property
    def bev_cell_size(self) -> float:
        return self.voxel_size * self.bev_stride


class ModelConfig(BaseModel):
    """
    Architecture of the perception-and-prediction model.
    """

    model_config = ConfigDict(extra="forbid")

    pillars: PillarConfig = Field(default_factory=PillarConfig)
    channels: int = Field(16, ge=1)
    temporal_heads: int = Field(4, ge=1)
    temporal_layers: int = Field(3, ge=1)
    window_sizes: tuple[int, ...] = WINDOW_SIZES
    spatial_heads_temporal: tuple[int, ...] = (8, 4, 2)
    spatial_heads_agent: tuple[int, ...] = (16, 8, 4)
    agent_heads: int = Field(8, ge=1)
    agent_layers: int = Field(3, ge=1)
    map_hidden: int = Field(32, ge=1)
    map_heads: int = Field(2, ge=1)
    map_polylines: int = Field(MAP_POLYLINES_PER_CELL, ge=1)
    mlp_ratio: int = Field(2, ge=1)
    compression_rate: int = Field(1, ge=1)
    anchor_size: tuple[float, float, float] = (
        ANCHOR_WIDTH_M,
        ANCHOR_LENGTH_M,
        ANCHOR_HEIGHT_M,
    )
    # Ablation switches
    use_self_spatial: bool = True
    use_agent_fusion: bool = True
    use_map: bool = True
    residual: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        if len(self.window_sizes) != len(self.spatial_heads_temporal) or len(
            self.window_sizes
        ) != len(self.spatial_heads_agent):
            raise ValueError("one head count per window size is required")
        heads = [self.temporal_heads, self.agent_heads, self.map_heads]
        heads += list(self.spatial_heads_temporal) + list(self.spatial_heads_agent)
        for h in heads:
            if self.channels % h:
                raise ValueError(f"channels={self.channels} not divisible by {h}")
        bh, bw = self.padded_bev_shape
        for p in self.window_sizes:
            if bh % p or bw % p:
                raise ValueError(f"window size {p} does not tile the BEV grid")
        return self

    @property
    def compressed_channels(self) -> int:
        """ceil(C / r); never below one channel."""
        return math.ceil(self.channels / self.compression_rate)

    @property
    def padded_bev_shape(self) -> tuple[int, int]:
        """BEV grid padded up to a multiple of the largest window."""
        h, w = self.pillars.bev_shape
        p = max(self.window_sizes)
        return -(-h // p) * p, -(-w // p) * p


class PipelineConfig(BaseModel):
    """
    One evaluation run: strategy, channel and decoding thresholds.
    """

    model_config = ConfigDict(extra="forbid")

    strategy: FusionStrategy
    channel: ChannelModel = Field(default_factory=ChannelModel)
    compression_rate: int = Field(1, ge=1)
    comm_range_m: float = Field(COMMUNICATION_RANGE_M, gt=0.0)
    score_threshold: float = Field(DETECTION_SCORE_THRESHOLD, ge=0.0, le=1.0)
    nms_iou: float = Field(DETECTION_NMS_IOU, gt=0.0, le=1.0)
    late_nms_iou: float = Field(LATE_FUSION_NMS_IOU, gt=0.0, le=1.0)
    tracker_gate_m: float = Field(TRACKER_GATE_M, gt=0.0)
    predictor: Literal["learned", "constant_velocity"] = "learned"
    eval_frames: list[int] | None = Field(
        None, description="Frames to evaluate; default every frame with full context"
    )


class MetricsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ap_iou: float = Field(AP_IOU_THRESHOLD, gt=0.0, le=1.0)
    miss_threshold_m: float = Field(MISS_RATE_THRESHOLD_M, gt=0.0)
    epa_threshold_m: float = Field(EPA_FDE_THRESHOLD_M, gt=0.0)
    epa_false_positive_penalty: float = Field(EPA_FALSE_POSITIVE_PENALTY, ge=0.0)


# ====================================================================================
# Annotation Models
# ====================================================================================


class Annotation(BaseModel):
    """
    One agent's label of one object at one frame, in that agent's frame.
    """

    agent_id: int = Field(..., ge=0)
    frame: int = Field(..., ge=0)
    local_id: int | None = Field(
        None, description="Agent-local track id; None when labels are id-free"
    )
    box: BoxParams
    pose: Pose | None = Field(None, description="World pose of the annotating agent")


class TrackedAnnotation(Annotation):
    """
    An annotation after association: its global track id and the consensus
    box in the world frame.
    """

    global_track_id: int = Field(..., ge=0)
    refined_box: BoxParams


# ====================================================================================
# Report Models
# ====================================================================================


class MetricsRow(BaseModel):
    """
    One evaluated run (strategy, sweep point, seed) reduced over its frames.

    Prediction metrics are None when no detection matched a ground truth
    object with a known future.
    """

    model_config = ConfigDict(extra="forbid")

    strategy: FusionStrategy
    seed: int
    point: str = Field("", description="Sweep point label, e.g. rate=4")
    frames: int = Field(..., ge=0)
    ap50: float = Field(..., ge=0.0, le=1.0)
    ade: float | None = None
    fde: float | None = None
    mr: float | None = None
    epa: float | None = Field(None, description="None when no ground truth was present")
    false_negatives: int = Field(0, ge=0)
    occluded_recall: float | None = None
    bits_tx_total: int = Field(0, ge=0)
    mean_delay_ms: float = Field(0.0, ge=0.0)
