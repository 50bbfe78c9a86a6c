"""
Tests for cli/config.py - experiment schema, presets and sweep expansion.

Tests cover:
- Required fields, unknown keys and the schema version
- Preset families and their sweep points
- Model tags and the full-scale model preset
- Loading from a path, the environment and the repository default
"""

from pathlib import Path

import pytest
from pydantic import ValidationError

from v2xpnp_desk.cli.config import (
    CONFIG_ENV_VAR,
    PRESET_NAMES,
    Ablation,
    ExperimentConfig,
    expand_sweep,
    full_scale_model,
    load_experiment_config,
    model_tag,
    preset_config,
    save_experiment_config,
)
from v2xpnp_desk.shared.errors import ConfigurationError
from v2xpnp_desk.shared.types import FusionStrategy, ModelConfig

REPO_CONFIG = Path(__file__).parents[2] / "configs" / "experiment.json"


class TestSchema:
    """Tests for ExperimentConfig validation."""

    def test_minimal_config(self, experiment_dict):
        """Pipeline strategy and schema version are enough."""
        config = ExperimentConfig.model_validate(experiment_dict)
        assert config.pipeline.strategy == FusionStrategy.NO_FUSION
        assert config.checkpoint_dir is None

    def test_missing_strategy_names_field(self, experiment_dict):
        """The error locates pipeline.strategy."""
        experiment_dict["pipeline"] = {}
        with pytest.raises(ValidationError) as info:
            ExperimentConfig.model_validate(experiment_dict)
        locs = [e["loc"] for e in info.value.errors()]
        assert ("pipeline", "strategy") in locs

    def test_unknown_key_rejected(self, experiment_dict):
        """Typos are errors, not silently ignored."""
        experiment_dict["pipeline"]["stratgy"] = "late"
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate(experiment_dict)

    def test_schema_version_checked(self, experiment_dict):
        """Only the current schema version is accepted."""
        experiment_dict["schema_version"] = 2
        with pytest.raises(ValidationError, match="schema_version"):
            ExperimentConfig.model_validate(experiment_dict)

    def test_schema_version_required(self, experiment_dict):
        """Configs without a version are rejected."""
        del experiment_dict["schema_version"]
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate(experiment_dict)

    def test_compression_rate_positive(self, experiment_dict):
        """Sweep rates start at 1."""
        experiment_dict["sweep"] = {"compression_rates": [0, 4]}
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate(experiment_dict)


class TestSweep:
    """Tests for sweep expansion and presets."""

    def test_no_axes_single_point(self, experiment_dict):
        """A config without axes is one point labelled by its strategy."""
        (point,) = expand_sweep(ExperimentConfig.model_validate(experiment_dict))
        assert point.label == "no_fusion"
        assert point.pipeline.strategy == FusionStrategy.NO_FUSION

    @pytest.mark.parametrize(
        "name, count",
        [
            ("strategy-comparison", 5),
            ("communication", 2),
            ("compression", 3),
            ("delay", 6),
            ("noise", 6),
            ("ablation", 3),
        ],
    )
    def test_preset_point_counts(self, name, count):
        """Every preset expands to its family's grid."""
        assert len(expand_sweep(preset_config(name))) == count

    def test_presets_cover_names(self):
        """Each listed preset builds."""
        for name in PRESET_NAMES:
            assert preset_config(name).name == name

    def test_unknown_preset(self):
        """Unknown names raise a configuration error."""
        with pytest.raises(ConfigurationError, match="unknown preset"):
            preset_config("weather")

    def test_compression_sets_pipeline_and_model(self):
        """Rate applies to both sides of the channel."""
        points = expand_sweep(preset_config("compression"))
        assert [p.pipeline.compression_rate for p in points] == [1, 32, 128]
        assert [p.model.compression_rate for p in points] == [1, 32, 128]

    def test_delay_grid(self):
        """Extra latency 0 to 500 ms in 100 ms steps."""
        points = expand_sweep(preset_config("delay"))
        delays = [p.pipeline.channel.extra_latency_ms for p in points]
        assert delays == [0.0, 100.0, 200.0, 300.0, 400.0, 500.0]

    def test_noise_grid_labels(self):
        """Noise labels are short even for inexact grid values."""
        points = expand_sweep(preset_config("noise"))
        assert points[3].label == "noise=0.6m/0.6deg"
        assert points[-1].pipeline.channel.pose_noise_rotation_deg == pytest.approx(1.0)

    def test_communication_drops(self):
        """One-step against multi-step under 20 % drops."""
        points = expand_sweep(preset_config("communication"))
        assert {p.pipeline.channel.drop_probability for p in points} == {0.2}
        assert [p.pipeline.strategy for p in points] == [
            FusionStrategy.INTERMEDIATE_ONE_STEP,
            FusionStrategy.INTERMEDIATE_MULTI_STEP,
        ]

    def test_ablation_switches(self):
        """Temporal only, plus multi-agent fusion, plus map."""
        points = expand_sweep(preset_config("ablation"))
        switches = [(p.model.use_agent_fusion, p.model.use_map) for p in points]
        assert switches == [(False, False), (True, False), (True, True)]
        assert points[0].label == f"ablation={Ablation.TEMPORAL}"

    def test_axes_cross(self, experiment_dict):
        """Two axes multiply."""
        experiment_dict["sweep"] = {
            "strategies": ["no_fusion", "late"],
            "extra_latency_ms": [0.0, 100.0, 200.0],
        }
        points = expand_sweep(ExperimentConfig.model_validate(experiment_dict))
        assert len(points) == 6
        assert points[1].label == "strategy=no_fusion,delay_ms=100"

    def test_duplicate_labels_rejected(self, experiment_dict):
        """Repeated axis values would overwrite each other's outputs."""
        experiment_dict["sweep"] = {"drop_probability": [0.1, 0.1]}
        with pytest.raises(ConfigurationError):
            expand_sweep(ExperimentConfig.model_validate(experiment_dict))


class TestModelPresets:
    """Tests for model tags and the full-scale model."""

    def test_default_tag(self):
        """Default model is the full model at rate 1."""
        assert model_tag(ModelConfig()) == "r1"

    def test_ablated_tag(self):
        """Disabled blocks appear in the tag."""
        config = ModelConfig(compression_rate=32, use_agent_fusion=False, use_map=False)
        assert model_tag(config) == "r32-noagent-nomap"

    def test_full_scale_model(self):
        """Finer BEV grid and wider features than the desk default."""
        model = full_scale_model()
        assert model.pillars.bev_shape == (175, 100)
        assert model.map_hidden == 256
        assert model.channels > ModelConfig().channels


class TestLoadSave:
    """Tests for reading and writing experiment configs."""

    def test_round_trip(self, experiment_dict, tmp_path):
        """Saved configs load back equal."""
        config = ExperimentConfig.model_validate(experiment_dict)
        path = save_experiment_config(config, tmp_path / "exp.json")
        assert load_experiment_config(path) == config

    def test_environment_fallback(self, experiment_dict, tmp_path, monkeypatch):
        """Without a path the environment variable is used."""
        config = ExperimentConfig.model_validate(experiment_dict)
        path = save_experiment_config(config, tmp_path / "env.json")
        monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
        assert load_experiment_config().name == "tiny"

    def test_missing_file(self, tmp_path):
        """Absent configs are configuration errors."""
        with pytest.raises(ConfigurationError, match="not found"):
            load_experiment_config(tmp_path / "absent.json")

    def test_invalid_json_content(self, tmp_path):
        """Malformed content surfaces the validation error."""
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": 1}')
        with pytest.raises(ValidationError):
            load_experiment_config(path)

    def test_repository_config_is_valid(self):
        """The shipped default config validates."""
        config = load_experiment_config(REPO_CONFIG)
        assert len(expand_sweep(config)) == len(FusionStrategy)
