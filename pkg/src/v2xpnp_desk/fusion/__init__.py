"""
Spatio-temporal fusion: temporal, self-spatial, multi-agent and map attention,
channel compression, heads and the assembled model.
"""

from v2xpnp_desk.fusion.agents import MultiAgentFusion, RelationAttention
from v2xpnp_desk.fusion.compress import ChannelCompressor, compressed_channels
from v2xpnp_desk.fusion.heads import DetectionHead, HeadOutputs, PredictionHead
from v2xpnp_desk.fusion.mapfeat import (
    MapBevFusion,
    MapEncoder,
    MapGridFeature,
    build_map_grid,
    gather_polylines,
)
from v2xpnp_desk.fusion.model import (
    PARAM_GROUPS,
    V2XPnPModel,
    load_model,
    save_model,
    self_relation,
)
from v2xpnp_desk.fusion.predictor import DecoupledPredictor, constant_velocity_offsets
from v2xpnp_desk.fusion.spatial import SelfSpatialFusion, window_merge, window_partition
from v2xpnp_desk.fusion.temporal import TemporalFusion

__all__ = [
    "PARAM_GROUPS",
    "ChannelCompressor",
    "DecoupledPredictor",
    "DetectionHead",
    "HeadOutputs",
    "MapBevFusion",
    "MapEncoder",
    "MapGridFeature",
    "MultiAgentFusion",
    "PredictionHead",
    "RelationAttention",
    "SelfSpatialFusion",
    "TemporalFusion",
    "V2XPnPModel",
    "build_map_grid",
    "compressed_channels",
    "constant_velocity_offsets",
    "gather_polylines",
    "load_model",
    "save_model",
    "self_relation",
    "window_merge",
    "window_partition",
]
