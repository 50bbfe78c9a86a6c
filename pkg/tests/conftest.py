"""
Pytest fixtures for V2XPnP Desk tests.

Provides small seeded scenarios, model configs sized for fast tests and
helpers for building boxes and detections. Fixtures use the project's actual
constants so tests follow configuration changes.
"""

import numpy as np
import pytest

from v2xpnp_desk.scenario.generator import generate_scenario
from v2xpnp_desk.shared.constants import FRAME_INTERVAL_S
from v2xpnp_desk.shared.types import (
    Detection,
    ModelConfig,
    PillarConfig,
    ScenarioConfig,
)

# =============================================================================
# Box Helpers
# =============================================================================


def make_box(
    x: float = 0.0,
    y: float = 0.0,
    yaw: float = 0.0,
    w: float = 2.0,
    l: float = 4.5,  # noqa: E741
    h: float = 1.5,
    z: float = 0.75,
) -> np.ndarray:
    """Box array (x, y, z, w, l, h, yaw)."""
    return np.array([x, y, z, w, l, h, yaw], dtype=np.float64)


def make_detection(
    x: float,
    y: float,
    confidence: float = 0.9,
    source_agent: int = 0,
    yaw: float = 0.0,
) -> Detection:
    """Car-sized detection at (x, y)."""
    return Detection(
        box=tuple(float(v) for v in make_box(x, y, yaw)),
        confidence=confidence,
        source_agent=source_agent,
    )


# =============================================================================
# Scenario Fixtures
# =============================================================================


@pytest.fixture
def scenario_config():
    """Default scenario config: 16 frames, ego + helper CAV + one RSU."""
    return ScenarioConfig()


@pytest.fixture
def scenario(scenario_config):
    """Seeded scenario with the occlusion stressor."""
    return generate_scenario(scenario_config, seed=7)


@pytest.fixture
def quiet_scenario():
    """Ego alone on the road: no background traffic, no stressor."""
    config = ScenarioConfig(
        num_vehicles=1,
        num_infrastructure=0,
        num_background_objects=0,
        occlusion_stressor=False,
    )
    return generate_scenario(config, seed=0)


@pytest.fixture
def frame_interval():
    return FRAME_INTERVAL_S


# =============================================================================
# Model Fixtures
# =============================================================================


@pytest.fixture
def small_pillar_config():
    """40 m x 32 m grid with 4 m BEV cells (10 x 8 BEV)."""
    return PillarConfig(x_range=(-20.0, 20.0), y_range=(-16.0, 16.0))


@pytest.fixture
def small_model_config(small_pillar_config):
    """Full architecture on a small grid with one layer per stack."""
    return ModelConfig(
        pillars=small_pillar_config,
        channels=16,
        temporal_layers=1,
        agent_layers=1,
        window_sizes=(2, 4),
        spatial_heads_temporal=(4, 2),
        spatial_heads_agent=(8, 4),
        map_hidden=16,
    )


@pytest.fixture
def rng():
    """Reproducible generator."""
    return np.random.default_rng(42)


# =============================================================================
# Experiment Fixtures
# =============================================================================


@pytest.fixture
def experiment_dict(small_model_config, tmp_path):
    """
    Raw experiment config: one seed, eleven frames (one evaluated frame),
    no_fusion on the small model, outputs under tmp_path.
    """
    return {
        "schema_version": 1,
        "name": "tiny",
        "suite": {
            "scenario": {"num_frames": 11},
            "eval_seeds": [0],
            "train_seeds": [3],
            "holdout_seeds": [],
        },
        "pipeline": {"strategy": "no_fusion"},
        "model": small_model_config.model_dump(mode="json"),
        "output_dir": str(tmp_path / "runs"),
    }
