"""
Experiment configuration: schema, presets, sweep expansion, loading and
saving.
"""

import itertools
import logging
import os
from enum import StrEnum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator

from v2xpnp_desk.shared.constants import DEFAULT_CONFIG_PATH, DEFAULT_OUTPUT_DIR
from v2xpnp_desk.shared.errors import ConfigurationError
from v2xpnp_desk.shared.types import (
    FusionStrategy,
    MetricsConfig,
    ModelConfig,
    PillarConfig,
    PipelineConfig,
    ScenarioConfig,
)
from v2xpnp_desk.shared.utils import atomic_write_text
from v2xpnp_desk.trainer.schedule import TrainSchedule

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CONFIG_ENV_VAR = "V2XPNP_CONFIG"


class Ablation(StrEnum):
    TEMPORAL = "temporal"
    SPATIAL = "temporal+spatial"
    MAP = "temporal+spatial+map"


ABLATION_SWITCHES: dict[Ablation, dict[str, bool]] = {
    Ablation.TEMPORAL: {"use_agent_fusion": False, "use_map": False},
    Ablation.SPATIAL: {"use_agent_fusion": True, "use_map": False},
    Ablation.MAP: {"use_agent_fusion": True, "use_map": True},
}


class SuiteConfig(BaseModel):
    """Scenario seeds for evaluation, training and early stopping."""

    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    eval_seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    train_seeds: list[int] = Field(default_factory=lambda: list(range(100, 104)))
    holdout_seeds: list[int] = Field(default_factory=lambda: [200])
    ego_id: int = Field(0, ge=0)


class SweepAxes(BaseModel):
    """
    Axes crossed into sweep points. An unset axis keeps the base pipeline
    or model value.
    """

    model_config = ConfigDict(extra="forbid")

    strategies: list[FusionStrategy] | None = None
    compression_rates: list[int] | None = None
    extra_latency_ms: list[float] | None = None
    pose_noise: list[tuple[float, float]] | None = Field(
        None, description="(translation m, rotation deg) pairs"
    )
    drop_probability: list[float] | None = None
    ablations: list[Ablation] | None = None

    @field_validator("compression_rates")
    @classmethod
    def _positive_rates(cls, rates: list[int] | None) -> list[int] | None:
        if rates is not None and any(r < 1 for r in rates):
            raise ValueError("compression rates must be at least 1")
        return rates


class ExperimentConfig(BaseModel):
    """
    One experiment: suite, base pipeline and model, sweep axes and outputs.

    `checkpoint_dir` holds one checkpoint per distinct model of the sweep,
    named by `model_tag`; without it every point uses an untrained model.
    """

    model_config = ConfigDict(extra="forbid")

    schema_version: int
    name: str = "experiment"
    suite: SuiteConfig = Field(default_factory=SuiteConfig)
    pipeline: PipelineConfig
    model: ModelConfig = Field(default_factory=ModelConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    sweep: SweepAxes = Field(default_factory=SweepAxes)
    checkpoint_dir: str | None = None
    output_dir: str = DEFAULT_OUTPUT_DIR

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, version: int) -> int:
        if version != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema_version {version}, expected {SCHEMA_VERSION}"
            )
        return version


class SweepPoint(BaseModel):
    """A fully specified run: label, pipeline and model."""

    model_config = ConfigDict(frozen=True)

    label: str
    pipeline: PipelineConfig
    model: ModelConfig


# ====================================================================================
# Sweep Expansion
# ====================================================================================


def model_tag(model: ModelConfig) -> str:
    """Checkpoint name of a model variant, e.g. r32-nomap."""
    tag = f"r{model.compression_rate}"
    if not model.use_agent_fusion:
        tag += "-noagent"
    if not model.use_map:
        tag += "-nomap"
    if not model.use_self_spatial:
        tag += "-noself"
    return tag


def _fmt(value: float) -> str:
    return f"{value:g}"


def expand_sweep(config: ExperimentConfig) -> list[SweepPoint]:
    """
    Cross every set axis, in a fixed order, into sweep points.

    A compression rate applies to both the pipeline and the model.
    """
    axes = config.sweep
    strategies = axes.strategies or [config.pipeline.strategy]
    rates = axes.compression_rates or [None]
    latencies = axes.extra_latency_ms or [None]
    noises = axes.pose_noise or [None]
    drops = axes.drop_probability or [None]
    ablations = axes.ablations or [None]

    points = []
    for strategy, rate, latency, noise, drop, ablation in itertools.product(
        strategies, rates, latencies, noises, drops, ablations
    ):
        parts = []
        channel = config.pipeline.channel.model_dump()
        pipeline = config.pipeline.model_dump()
        model = config.model.model_dump()
        pipeline["strategy"] = strategy
        if axes.strategies:
            parts.append(f"strategy={strategy}")
        if rate is not None:
            pipeline["compression_rate"] = model["compression_rate"] = rate
            parts.append(f"rate={rate}")
        if latency is not None:
            channel["extra_latency_ms"] = latency
            parts.append(f"delay_ms={_fmt(latency)}")
        if noise is not None:
            channel["pose_noise_translation_m"] = noise[0]
            channel["pose_noise_rotation_deg"] = noise[1]
            parts.append(f"noise={_fmt(noise[0])}m/{_fmt(noise[1])}deg")
        if drop is not None:
            channel["drop_probability"] = drop
            parts.append(f"drop={_fmt(drop)}")
        if ablation is not None:
            model.update(ABLATION_SWITCHES[ablation])
            parts.append(f"ablation={ablation}")
        pipeline["channel"] = channel
        points.append(
            SweepPoint(
                label=",".join(parts) or str(strategy),
                pipeline=PipelineConfig.model_validate(pipeline),
                model=ModelConfig.model_validate(model),
            )
        )
    labels = [p.label for p in points]
    if len(set(labels)) != len(labels):
        raise ConfigurationError("sweep produced duplicate point labels")
    return points


# ====================================================================================
# Presets
# ====================================================================================

PRESET_NAMES = (
    "strategy-comparison",
    "communication",
    "compression",
    "delay",
    "noise",
    "ablation",
)


def full_scale_model() -> ModelConfig:
    """Finer BEV grid, wider channels and a 256-wide map encoder."""
    return ModelConfig(
        pillars=PillarConfig(bev_stride=2),
        channels=64,
        map_hidden=256,
    )


def preset_config(name: str) -> ExperimentConfig:
    """
    Built-in experiment families.

    Raises:
        ConfigurationError: If the preset is unknown.
    """
    one_step = FusionStrategy.INTERMEDIATE_ONE_STEP
    pipeline: dict[str, object] = {"strategy": one_step}
    sweep: dict[str, object]
    match name:
        case "strategy-comparison":
            sweep = {"strategies": list(FusionStrategy)}
        case "communication":
            pipeline["channel"] = {"drop_probability": 0.2}
            sweep = {
                "strategies": [one_step, FusionStrategy.INTERMEDIATE_MULTI_STEP],
            }
        case "compression":
            sweep = {"compression_rates": [1, 32, 128]}
        case "delay":
            sweep = {"extra_latency_ms": [0.0, 100.0, 200.0, 300.0, 400.0, 500.0]}
        case "noise":
            sweep = {"pose_noise": [(0.2 * k, 0.2 * k) for k in range(6)]}
        case "ablation":
            sweep = {"ablations": list(Ablation)}
        case _:
            raise ConfigurationError(
                f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}"
            )
    return ExperimentConfig.model_validate(
        {
            "schema_version": SCHEMA_VERSION,
            "name": name,
            "pipeline": pipeline,
            "sweep": sweep,
        }
    )


# ====================================================================================
# Load / Save
# ====================================================================================


def load_experiment_config(filepath: str | Path | None = None) -> ExperimentConfig:
    """
    Load an experiment config from JSON.

    Args:
        filepath: Path to the config. If None, the V2XPNP_CONFIG environment
            variable or the default path (configs/experiment.json).

    Raises:
        ConfigurationError: If the file does not exist.
        pydantic.ValidationError: If the content is invalid.
    """
    if filepath is None:
        filepath = os.environ.get(CONFIG_ENV_VAR, DEFAULT_CONFIG_PATH)

    path = Path(filepath)
    if not path.exists():
        raise ConfigurationError(f"Experiment config not found: {filepath}")

    with open(path) as f:
        data = f.read()
    # Pydantic validation
    config = ExperimentConfig.model_validate_json(data)
    logger.info(f"Experiment config '{config.name}' loaded from: {path}")
    return config


def save_experiment_config(
    config: ExperimentConfig, filepath: str | Path | None = None
) -> Path:
    """Write the config as JSON, atomically."""
    if filepath is None:
        filepath = os.environ.get(CONFIG_ENV_VAR, DEFAULT_CONFIG_PATH)
    path = atomic_write_text(filepath, config.model_dump_json(indent=2))
    logger.info(f"Experiment config saved to: {path}")
    return path
