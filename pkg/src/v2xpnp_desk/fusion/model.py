"""
The assembled perception-and-prediction model.

Stages, each exposed separately so the communication strategies can cut the
pipeline where they transmit:

    points --encode_frame--> BEV map (padded)
    history of maps --fuse_history--> fused map
    fused map --compress/decompress--> shared map
    ego + neighbor maps --fuse_agents--> cooperative map
    cooperative map + vector map --fuse_map--> final map
    final map --heads--> per-anchor logits, box codes, step offsets

The late-fusion predictor lives alongside so one checkpoint carries both.
"""

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from v2xpnp_desk.fusion.agents import MultiAgentFusion
from v2xpnp_desk.fusion.compress import ChannelCompressor
from v2xpnp_desk.fusion.heads import DetectionHead, HeadOutputs, PredictionHead
from v2xpnp_desk.fusion.mapfeat import (
    MapBevFusion,
    MapEncoder,
    MapGridFeature,
    build_map_grid,
)
from v2xpnp_desk.fusion.predictor import DecoupledPredictor
from v2xpnp_desk.fusion.temporal import TemporalFusion
from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.checkpoint import load_checkpoint, save_checkpoint
from v2xpnp_desk.numcore.layers import Module
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.perception.anchors import build_anchor_grid
from v2xpnp_desk.perception.decode import decode_detections, decode_trajectories
from v2xpnp_desk.perception.pillars import PillarEncoder
from v2xpnp_desk.shared.constants import (
    DETECTION_NMS_IOU,
    DETECTION_SCORE_THRESHOLD,
    HISTORY_FRAMES,
    RELATION_INDEX,
)
from v2xpnp_desk.shared.errors import CheckpointError, ShapeError
from v2xpnp_desk.shared.types import (
    AgentKind,
    Detection,
    ModelConfig,
    Pose,
    PredictedTrajectory,
    VectorMap,
)
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)

# Parameter groups by top-level submodule; used for freezing during training
PARAM_GROUPS: dict[str, tuple[str, ...]] = {
    "backbone": ("backbone",),
    "temporal": ("temporal",),
    "agent": ("compressor", "agent"),
    "map": ("map_encoder", "map_fusion"),
    "detection_head": ("detection",),
    "prediction_head": ("prediction",),
    "predictor": ("predictor",),
}


class V2XPnPModel(Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config.channels
        self.backbone = self.module("backbone", PillarEncoder(config.pillars, c, rng))
        self.temporal = self.module("temporal", TemporalFusion(config, rng))
        self.compressor = self.module(
            "compressor", ChannelCompressor(c, config.compression_rate, rng)
        )
        self.agent = self.module("agent", MultiAgentFusion(config, rng))
        self.map_encoder = self.module(
            "map_encoder", MapEncoder(c, config.map_hidden, rng)
        )
        self.map_fusion = self.module(
            "map_fusion",
            MapBevFusion(c, config.map_heads, rng, config.mlp_ratio, config.residual),
        )
        self.anchors = build_anchor_grid(config.pillars, config.anchor_size)
        self.detection = self.module(
            "detection", DetectionHead(c, self.anchors.per_cell, rng)
        )
        self.prediction = self.module(
            "prediction", PredictionHead(c, self.anchors.per_cell, rng)
        )
        self.predictor = self.module(
            "predictor",
            DecoupledPredictor(c, config.map_heads, rng, config.map_hidden),
        )

    # ------------------------------------------------------------------
    # Parameter groups
    # ------------------------------------------------------------------

    def param_group(self, group: str) -> dict[str, Tensor]:
        """Parameters of one named group, keyed by dotted name."""
        if group not in PARAM_GROUPS:
            raise KeyError(
                f"unknown parameter group {group!r}; known: {sorted(PARAM_GROUPS)}"
            )
        prefixes = tuple(p + "." for p in PARAM_GROUPS[group])
        return {n: t for n, t in self.named_parameters() if n.startswith(prefixes)}

    # ------------------------------------------------------------------
    # Pipeline stages
    # ------------------------------------------------------------------

    @property
    def bev_shape(self) -> tuple[int, int]:
        return self.config.pillars.bev_shape

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.config.padded_bev_shape

    def pad(self, feature: Tensor) -> Tensor:
        """Zero-pad an (H, W, C) map up to the window-divisible grid."""
        h, w, c = feature.shape
        ph, pw = self.padded_shape
        if (h, w) == (ph, pw):
            return feature
        if h > ph or w > pw:
            raise ShapeError(f"map {h}x{w} exceeds padded grid {ph}x{pw}")
        if ph > h:
            feature = ops.concat([feature, np.zeros((ph - h, w, c))], axis=0)
        if pw > w:
            feature = ops.concat([feature, np.zeros((ph, pw - w, c))], axis=1)
        return feature

    def crop(self, feature: Tensor) -> Tensor:
        h, w = self.bev_shape
        if feature.shape[:2] == (h, w):
            return feature
        return ops.index(feature, (slice(0, h), slice(0, w)))

    def encode_frame(self, points: np.ndarray) -> Tensor:
        """Ego-frame cloud (N, 4) to a padded (Hp, Wp, C) BEV map."""
        return self.pad(self.backbone(points))

    def fuse_history(
        self,
        frames: Sequence[Tensor | None],
        time_offsets: np.ndarray | None = None,
    ) -> Tensor:
        """
        Temporal fusion of maps ordered oldest to newest; None marks a
        missing frame.
        """
        present = [f for f in frames if f is not None]
        if not present:
            raise ShapeError("temporal fusion needs at least one valid frame")
        zeros = np.zeros(present[0].shape)
        stack = ops.stack([zeros if f is None else f for f in frames], axis=0)
        valid = np.array([f is not None for f in frames])
        return self.temporal(stack, valid, time_offsets)

    def compress(self, feature: Tensor) -> Tensor:
        return self.compressor.compress(feature)

    def decompress(self, feature: Tensor) -> Tensor:
        return self.compressor.decompress(feature)

    def fuse_agents(
        self,
        features: Sequence[Tensor],
        kinds: Sequence[AgentKind],
        relations: np.ndarray,
    ) -> Tensor:
        """Multi-agent fusion with the ego first; the ego map alone when disabled."""
        if not self.config.use_agent_fusion:
            if not features:
                raise ShapeError("multi-agent fusion needs at least the ego map")
            return features[0]
        return self.agent(features, kinds, relations)

    def map_grid(self, vector_map: VectorMap, ego_pose: Pose) -> MapGridFeature:
        return build_map_grid(
            vector_map,
            ego_pose,
            self.config.pillars,
            self.padded_shape,
            self.config.map_polylines,
        )

    def fuse_map(self, feature: Tensor, grid: MapGridFeature | None) -> Tensor:
        if not self.config.use_map or grid is None:
            return feature
        return self.map_fusion(feature, self.map_encoder(grid), grid)

    def heads(self, feature: Tensor) -> HeadOutputs:
        final = self.crop(feature)
        logits, codes = self.detection(final)
        return HeadOutputs(logits, codes, self.prediction(final))

    def decode(
        self,
        outputs: HeadOutputs,
        score_threshold: float = DETECTION_SCORE_THRESHOLD,
        nms_iou: float = DETECTION_NMS_IOU,
        source_agent: int = 0,
    ) -> tuple[list[Detection], list[PredictedTrajectory]]:
        detections = decode_detections(
            outputs.cls_logits.numpy(),
            outputs.box_codes.numpy(),
            self.anchors,
            score_threshold,
            nms_iou,
            source_agent,
        )
        return detections, decode_trajectories(outputs.offsets.numpy(), detections)

    def single_agent(
        self,
        clouds: Sequence[np.ndarray | None],
        grid: MapGridFeature | None,
        kind: AgentKind = AgentKind.VEHICLE,
    ) -> HeadOutputs:
        """
        The full path for one agent: history of ego-frame clouds (oldest
        first, None where missing), temporal fusion, self-only agent fusion,
        map fusion and heads.
        """
        if len(clouds) > HISTORY_FRAMES:
            raise ShapeError(
                f"at most {HISTORY_FRAMES} history frames, got {len(clouds)}"
            )
        maps = [None if c is None else self.encode_frame(c) for c in clouds]
        fused = self.fuse_history(maps)
        fused = self.fuse_agents([fused], [kind], np.full((1, 1), self_relation(kind)))
        return self.heads(self.fuse_map(fused, grid))


def self_relation(kind: AgentKind) -> int:
    """Relation index of an agent with itself (V-V or I-I)."""
    return RELATION_INDEX[f"{kind.letter}-{kind.letter}"]


# ====================================================================================
# Checkpoints
# ====================================================================================


def _config_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_model(model: V2XPnPModel, path: str | Path) -> Path:
    """Write parameters plus a JSON sidecar holding the ModelConfig."""
    path = Path(path)
    save_checkpoint(model.parameters(), path)
    atomic_write_text(_config_path(path), model.config.model_dump_json(indent=2))
    return path


def load_model(path: str | Path, expected: ModelConfig | None = None) -> V2XPnPModel:
    """
    Rebuild a model from a checkpoint and its config sidecar.

    Raises:
        CheckpointError: If a file is missing or malformed, or the stored
            config differs from `expected`.
    """
    path = Path(path)
    sidecar = _config_path(path)
    if not sidecar.exists():
        raise CheckpointError(f"model config not found next to checkpoint: {sidecar}")
    try:
        config = ModelConfig.model_validate_json(sidecar.read_text())
    except ValidationError as e:
        raise CheckpointError(f"invalid model config in {sidecar}: {e}") from e
    if expected is not None and expected != config:
        raise CheckpointError(
            f"checkpoint mismatch: {path} was trained with a different model config"
        )
    model = V2XPnPModel(config)
    model.load_state_dict(load_checkpoint(path))
    logger.info(f"Loaded model with {model.num_parameters()} parameters from {path}")
    return model
