"""
End-to-end runs of one ego over a scenario for every fusion strategy.

At each evaluated frame t the ego owns its history t-4 .. t and receives
whatever its current neighbors send over the channel:

    no_fusion                nothing
    early                    raw clouds of t-4 .. t
    late                     boxes of t-4 .. t
    intermediate_one_step    one temporally fused, compressed map
    intermediate_multi_step  one compressed map per frame of t-4 .. t

A message whose expected delay spans k frames carries the data of frame t-k.
Neighbor poses are perturbed by the channel's pose noise before their data
is moved into the ego frame.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from v2xpnp_desk.comms.channel import (
    apply_pose_noise,
    stale_frames,
    transmission_delay_ms,
    transmit,
)
from v2xpnp_desk.comms.graph import V2XGraph, build_v2x_graph
from v2xpnp_desk.comms.messages import (
    BoxesPayload,
    FeaturesPayload,
    Message,
    Payload,
    RawPointsPayload,
    payload_size,
)
from v2xpnp_desk.fusion.heads import HeadOutputs
from v2xpnp_desk.fusion.mapfeat import MapGridFeature
from v2xpnp_desk.fusion.model import V2XPnPModel
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.perception.warp import warp_bev
from v2xpnp_desk.scenario.sensor import PointCloud, sense
from v2xpnp_desk.scenario.truth import GroundTruthFrame, ground_truth, in_eval_window
from v2xpnp_desk.shared.constants import HISTORY_FRAMES, PREDICTION_HORIZON
from v2xpnp_desk.shared.errors import StrategyError
from v2xpnp_desk.shared.types import (
    AgentKind,
    CommLogEntry,
    Detection,
    FusionStrategy,
    PipelineConfig,
    Pose,
    PredictedTrajectory,
    Scenario,
)
from v2xpnp_desk.shared.utils import relative_pose, transform_points
from v2xpnp_desk.strategies.late import (
    ideal_track_and_predict,
    late_fusion_merge,
    move_detections,
)

logger = logging.getLogger(__name__)

# (sender, sent_frame) -> payload sent at that frame
PayloadBuilder = Callable[[int, int], Payload | None]


@dataclass
class FrameResult:
    frame: int
    ego_id: int
    strategy: FusionStrategy
    detections: list[Detection]
    trajectories: list[PredictedTrajectory]
    comm_log: list[CommLogEntry] = field(default_factory=list)
    gt: GroundTruthFrame | None = None

    @property
    def bits(self) -> int:
        """Bits put on the channel, dropped messages included."""
        return sum(e.bits for e in self.comm_log)


def _nonempty(payload: Payload | None) -> Payload | None:
    return None if payload is None else payload.nonempty()


def default_eval_frames(num_frames: int) -> list[int]:
    """Frames with a full history and a full future."""
    return list(range(HISTORY_FRAMES - 1, num_frames - PREDICTION_HORIZON))


class PipelineRun:
    """
    State of one (scenario, ego, config) run: sensor, map and detection
    caches plus the shared random stream.
    """

    def __init__(
        self,
        scenario: Scenario,
        ego_id: int,
        config: PipelineConfig,
        model: V2XPnPModel,
        rng: np.random.Generator,
    ) -> None:
        self.scenario = scenario
        self.ego_id = ego_id
        self.ego = scenario.agent(ego_id)
        self.config = config
        self.model = model
        self.rng = rng
        self._clouds: dict[tuple[int, int], PointCloud] = {}
        self._grids: dict[tuple[int, int], MapGridFeature] = {}
        self._detections: dict[tuple[int, int], list[Detection]] = {}
        self._graphs: dict[int, V2XGraph] = {}

        if config.strategy in (
            FusionStrategy.INTERMEDIATE_ONE_STEP,
            FusionStrategy.INTERMEDIATE_MULTI_STEP,
        ) and config.compression_rate != model.config.compression_rate:
            raise StrategyError(
                f"pipeline compression rate {config.compression_rate} does not match "
                f"the model's {model.config.compression_rate}"
            )

    # ------------------------------------------------------------------
    # Cached scene queries
    # ------------------------------------------------------------------

    def cloud(self, agent_id: int, frame: int) -> PointCloud:
        key = (agent_id, frame)
        if key not in self._clouds:
            self._clouds[key] = sense(self.scenario, agent_id, frame)
        return self._clouds[key]

    def graph(self, frame: int) -> V2XGraph:
        if frame not in self._graphs:
            self._graphs[frame] = build_v2x_graph(
                self.scenario.agents, frame, self.config.comm_range_m
            )
        return self._graphs[frame]

    def map_grid(self, agent_id: int, frame: int) -> MapGridFeature:
        key = (agent_id, frame)
        if key not in self._grids:
            pose = self.scenario.agent(agent_id).pose(frame)
            self._grids[key] = self.model.map_grid(self.scenario.vector_map, pose)
        return self._grids[key]

    def pose(self, agent_id: int, frame: int) -> Pose:
        return self.scenario.agent(agent_id).pose(frame)

    def kind(self, agent_id: int) -> AgentKind:
        return self.scenario.agent(agent_id).kind

    def aligned_points(
        self, agent_id: int, frame: int, target_frame: int
    ) -> np.ndarray:
        """An agent's cloud at `frame` in its own frame at `target_frame`."""
        points = self.cloud(agent_id, frame).points
        move = relative_pose(
            self.pose(agent_id, frame), self.pose(agent_id, target_frame)
        )
        return transform_points(points, move)

    def history_frames(self, frame: int) -> list[int]:
        return [f for f in range(frame - HISTORY_FRAMES + 1, frame + 1) if f >= 0]

    def local_history(self, agent_id: int, frame: int) -> list[np.ndarray | None]:
        """Own clouds of the history window, aligned to the newest frame."""
        return [
            self.aligned_points(agent_id, f, frame) for f in self.history_frames(frame)
        ]

    def noisy_transform(self, agent_id: int, frame: int, ego_frame: int) -> Pose:
        """Sender frame at `frame` expressed in the ego frame, through pose noise."""
        channel = self.config.channel
        noisy = apply_pose_noise(
            self.pose(agent_id, frame),
            channel.pose_noise_translation_m,
            channel.pose_noise_rotation_deg,
            self.rng,
        )
        return relative_pose(noisy, self.pose(self.ego_id, ego_frame))

    def agent_detections(self, agent_id: int, frame: int) -> list[Detection]:
        """Single-agent detections in the agent's frame at `frame`."""
        key = (agent_id, frame)
        if key not in self._detections:
            outputs = self.model.single_agent(
                self.local_history(agent_id, frame),
                self.map_grid(agent_id, frame),
                self.kind(agent_id),
            )
            self._detections[key], _ = self.model.decode(
                outputs, self.config.score_threshold, self.config.nms_iou, agent_id
            )
        return self._detections[key]

    # ------------------------------------------------------------------
    # Messaging
    # ------------------------------------------------------------------

    def staleness(self, payload: Payload) -> int:
        """Frames by which data lags at arrival, from the expected delay."""
        delay = sum(
            transmission_delay_ms(payload.stamp_bits(s), self.config.channel)
            for s in payload.stamps()
        )
        return stale_frames(delay, self.scenario.frame_interval_s)

    def send(
        self,
        frame: int,
        build: PayloadBuilder,
    ) -> tuple[dict[int, Message], list[CommLogEntry]]:
        """
        Build and transmit one message from every current neighbor.

        `build(sender, sent_frame)` returns the payload sent at `sent_frame`
        or None. Stamps with nothing to send are left out and a message
        with no stamps is not sent. The message is rebuilt at t-k when its
        expected delay spans k frames.
        """
        messages = []
        for sender in self.graph(frame).neighbors(self.ego_id):
            payload = _nonempty(build(sender, frame))
            if payload is None:
                continue
            lag = self.staleness(payload)
            if lag:
                if frame - lag < 0:
                    continue
                payload = _nonempty(build(sender, frame - lag))
                if payload is None:
                    continue
            messages.append(
                Message(sender, self.ego_id, self.config.strategy, frame - lag, payload)
            )
        graphs = {s: self.graph(s) for m in messages for s in m.stamps}
        result = transmit(
            messages,
            self.config.channel,
            self.rng,
            self.scenario.frame_interval_s,
            graphs,
        )
        delivered = {d.message.sender: d.message for d in result.delivered}
        logger.debug(
            f"frame {frame}: {len(messages)} sent, {len(delivered)} delivered, "
            f"{sum(payload_size(m) for m in delivered.values())} bits received"
        )
        return delivered, result.log

    # ------------------------------------------------------------------
    # Strategies
    # ------------------------------------------------------------------

    def decode(
        self, outputs: HeadOutputs
    ) -> tuple[list[Detection], list[PredictedTrajectory]]:
        return self.model.decode(
            outputs, self.config.score_threshold, self.config.nms_iou, self.ego_id
        )

    def heads(self, feature: Tensor, frame: int) -> HeadOutputs:
        grid = self.map_grid(self.ego_id, frame)
        return self.model.heads(self.model.fuse_map(feature, grid))

    def ego_fused(self, frame: int) -> Tensor:
        maps = [
            self.model.encode_frame(c) for c in self.local_history(self.ego_id, frame)
        ]
        return self.model.fuse_history(maps)

    def fuse_with(
        self, frame: int, senders: Sequence[int], maps: Sequence[Tensor]
    ) -> Tensor:
        """Ego-centric fusion; senders are the ego's neighbors at `frame`."""
        order = [self.ego_id, *senders]
        relations = self.graph(frame).relation_indices(order)
        return self.model.fuse_agents(
            [self.ego_fused(frame), *maps], [self.kind(a) for a in order], relations
        )

    def no_fusion_outputs(self, frame: int) -> HeadOutputs:
        return self.heads(self.fuse_with(frame, [], []), frame)

    def one_step_outputs(self, frame: int) -> tuple[HeadOutputs, list[CommLogEntry]]:
        """Each neighbor shares its temporally fused map of one frame."""
        c, r = self.model.config.channels, self.model.config.compression_rate

        def build(sender: int, sent: int) -> Payload | None:
            history = self.local_history(sender, sent)
            maps = [self.model.encode_frame(p) for p in history]
            fused = self.model.compress(self.model.fuse_history(maps))
            return FeaturesPayload({sent: fused}, c, r)

        delivered, log = self.send(frame, build)
        senders, maps = [], []
        for sender, message in sorted(delivered.items()):
            assert isinstance(message.payload, FeaturesPayload)
            (stamp,) = message.stamps
            shared = self.model.decompress(message.payload.features[stamp])
            move = self.noisy_transform(sender, stamp, frame)
            senders.append(sender)
            maps.append(warp_bev(shared, move, self.model.config.pillars))
        return self.heads(self.fuse_with(frame, senders, maps), frame), log

    def multi_step_outputs(self, frame: int) -> tuple[HeadOutputs, list[CommLogEntry]]:
        """
        Each neighbor shares one map per history frame; the ego fuses them
        over time in its own frame.
        """
        c, r = self.model.config.channels, self.model.config.compression_rate

        def build(sender: int, sent: int) -> Payload | None:
            return FeaturesPayload(
                {
                    f: self.model.compress(
                        self.model.encode_frame(self.cloud(sender, f).points)
                    )
                    for f in self.history_frames(sent)
                },
                c,
                r,
            )

        delivered, log = self.send(frame, build)
        slots = self.history_frames(frame)
        senders, maps = [], []
        for sender, message in sorted(delivered.items()):
            assert isinstance(message.payload, FeaturesPayload)
            lag = frame - message.sent_frame
            history: dict[int, Tensor] = {}
            for stamp in message.stamps:
                shared = self.model.decompress(message.payload.features[stamp])
                move = self.noisy_transform(sender, stamp, frame)
                history[stamp + lag] = warp_bev(shared, move, self.model.config.pillars)
            senders.append(sender)
            maps.append(self.model.fuse_history([history.get(f) for f in slots]))
        return self.heads(self.fuse_with(frame, senders, maps), frame), log

    def run_no_fusion(self, frame: int) -> FrameResult:
        detections, trajectories = self.decode(self.no_fusion_outputs(frame))
        return FrameResult(
            frame, self.ego_id, self.config.strategy, detections, trajectories
        )

    def run_early(self, frame: int) -> FrameResult:
        def build(sender: int, sent: int) -> Payload | None:
            frames = self.history_frames(sent)
            return RawPointsPayload({f: self.cloud(sender, f) for f in frames})

        delivered, log = self.send(frame, build)
        slots = self.history_frames(frame)
        merged = {f: [self.aligned_points(self.ego_id, f, frame)] for f in slots}
        for sender, message in delivered.items():
            assert isinstance(message.payload, RawPointsPayload)
            lag = frame - message.sent_frame
            for stamp in message.stamps:
                cloud = message.payload.clouds[stamp]
                move = self.noisy_transform(sender, stamp, frame)
                merged[stamp + lag].append(transform_points(cloud.points, move))
        clouds = [np.concatenate(merged[f], axis=0) for f in slots]
        outputs = self.model.single_agent(
            clouds, self.map_grid(self.ego_id, frame), self.ego.kind
        )
        detections, trajectories = self.decode(outputs)
        return FrameResult(
            frame, self.ego_id, self.config.strategy, detections, trajectories, log
        )

    def run_late(self, frame: int) -> FrameResult:
        def build(sender: int, sent: int) -> Payload | None:
            frames = self.history_frames(sent)
            return BoxesPayload({f: self.agent_detections(sender, f) for f in frames})

        delivered, log = self.send(frame, build)
        ego_pose = self.pose(self.ego_id, frame)
        slots = self.history_frames(frame)
        per_slot: dict[int, list[list[Detection]]] = {
            f: [
                move_detections(
                    self.agent_detections(self.ego_id, f),
                    relative_pose(self.pose(self.ego_id, f), ego_pose),
                )
            ]
            for f in slots
        }
        for sender, message in delivered.items():
            assert isinstance(message.payload, BoxesPayload)
            lag = frame - message.sent_frame
            for stamp in message.stamps:
                move = self.noisy_transform(sender, stamp, frame)
                moved = move_detections(message.payload.detections[stamp], move)
                per_slot[stamp + lag].append(moved)
        merged = [
            late_fusion_merge(per_slot[f], self.config.late_nms_iou) for f in slots
        ]
        detections, trajectories = ideal_track_and_predict(
            merged,
            self.scenario.vector_map,
            ego_pose,
            self.model.predictor,
            self.config.tracker_gate_m,
            self.model.config.map_polylines,
            constant_velocity=self.config.predictor == "constant_velocity",
        )
        return FrameResult(
            frame, self.ego_id, self.config.strategy, detections, trajectories, log
        )

    def run_intermediate_one_step(self, frame: int) -> FrameResult:
        outputs, log = self.one_step_outputs(frame)
        detections, trajectories = self.decode(outputs)
        return FrameResult(
            frame, self.ego_id, self.config.strategy, detections, trajectories, log
        )

    def run_intermediate_multi_step(self, frame: int) -> FrameResult:
        outputs, log = self.multi_step_outputs(frame)
        detections, trajectories = self.decode(outputs)
        return FrameResult(
            frame, self.ego_id, self.config.strategy, detections, trajectories, log
        )

    def run_frame(self, frame: int) -> FrameResult:
        match self.config.strategy:
            case FusionStrategy.NO_FUSION:
                result = self.run_no_fusion(frame)
            case FusionStrategy.EARLY:
                result = self.run_early(frame)
            case FusionStrategy.LATE:
                result = self.run_late(frame)
            case FusionStrategy.INTERMEDIATE_ONE_STEP:
                result = self.run_intermediate_one_step(frame)
            case FusionStrategy.INTERMEDIATE_MULTI_STEP:
                result = self.run_intermediate_multi_step(frame)
            case _:
                raise StrategyError(f"unknown strategy {self.config.strategy}")
        keep = _window_mask(result.detections)
        result.detections = [
            d for d, k in zip(result.detections, keep, strict=True) if k
        ]
        result.trajectories = [
            t for t, k in zip(result.trajectories, keep, strict=True) if k
        ]
        result.gt = ground_truth(self.scenario, self.ego_id, frame)
        return result


def _window_mask(detections: Sequence[Detection]) -> np.ndarray:
    if not detections:
        return np.zeros(0, dtype=bool)
    return in_eval_window(np.array([d.box[:2] for d in detections]))


def run_pipeline(
    scenario: Scenario,
    ego_id: int,
    config: PipelineConfig,
    model: V2XPnPModel,
    rng: np.random.Generator,
) -> list[FrameResult]:
    """
    Run one strategy for one ego over the evaluation frames.

    Raises:
        StrategyError: If the pipeline and model disagree on the compression
            rate of an intermediate strategy.
    """
    run = PipelineRun(scenario, ego_id, config, model, rng)
    frames = config.eval_frames or default_eval_frames(scenario.num_frames)
    results = [run.run_frame(f) for f in frames]
    logger.info(
        f"{config.strategy} ego {ego_id}: {len(results)} frames, "
        f"{sum(r.bits for r in results)} bits sent"
    )
    return results
