"""
Experiment tooling: config schema and presets, sweep runner, reports and the
`v2xpnp` command line.
"""

from v2xpnp_desk.cli.config import (
    ExperimentConfig,
    SweepPoint,
    expand_sweep,
    load_experiment_config,
    model_tag,
    preset_config,
    save_experiment_config,
)

__all__ = [
    "ExperimentConfig",
    "SweepPoint",
    "expand_sweep",
    "load_experiment_config",
    "model_tag",
    "preset_config",
    "save_experiment_config",
]
