"""
Shared types, constants, errors and geometry helpers for V2XPnP Desk.
"""

from v2xpnp_desk.shared.constants import (
    FRAME_INTERVAL_S,
    HISTORY_FRAMES,
    PREDICTION_HORIZON,
    RELATION_INDEX,
    RELATION_TYPES,
)
from v2xpnp_desk.shared.errors import (
    CheckpointError,
    ConfigurationError,
    DivergenceError,
    GeometryError,
    GraphError,
    MetricError,
    NonFiniteError,
    ScenarioError,
    ShapeError,
    StrategyError,
    TrainingError,
    V2XPnPError,
)

__all__ = [
    "FRAME_INTERVAL_S",
    "HISTORY_FRAMES",
    "PREDICTION_HORIZON",
    "RELATION_INDEX",
    "RELATION_TYPES",
    "CheckpointError",
    "ConfigurationError",
    "DivergenceError",
    "GeometryError",
    "GraphError",
    "MetricError",
    "NonFiniteError",
    "ScenarioError",
    "ShapeError",
    "StrategyError",
    "TrainingError",
    "V2XPnPError",
]
