"""
Synthetic scenarios: generation, ray-cast sensing and ground truth.
"""

from v2xpnp_desk.scenario.generator import build_vector_map, generate_scenario
from v2xpnp_desk.scenario.io import load_scenario, save_scenario
from v2xpnp_desk.scenario.sensor import PointCloud, raycast, sense
from v2xpnp_desk.scenario.truth import (
    GroundTruthFrame,
    VisibleHistory,
    annotate,
    ground_truth,
    in_eval_window,
    visible_history,
)

__all__ = [
    "GroundTruthFrame",
    "PointCloud",
    "VisibleHistory",
    "annotate",
    "build_vector_map",
    "generate_scenario",
    "ground_truth",
    "in_eval_window",
    "load_scenario",
    "raycast",
    "save_scenario",
    "sense",
    "visible_history",
]
