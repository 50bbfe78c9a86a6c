"""
Experiment runner: scenario suites, model training and sweep evaluation.

Each sweep point is independent. Its metrics land in
`<out>/points/<slug>/metrics.csv` with per-seed detections and comms logs
next to it; the merged `<out>/metrics.csv` holds every row in sweep order.
"""

import logging
import re
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from v2xpnp_desk.cli.config import ExperimentConfig, SweepPoint, expand_sweep, model_tag
from v2xpnp_desk.fusion.model import V2XPnPModel, load_model, save_model
from v2xpnp_desk.metrics.accumulate import evaluate_run
from v2xpnp_desk.metrics.io import read_metrics_csv, write_metrics_csv
from v2xpnp_desk.scenario.generator import generate_scenario
from v2xpnp_desk.scenario.io import save_scenario
from v2xpnp_desk.shared.constants import TRAINING_LOG_FILE
from v2xpnp_desk.shared.errors import CheckpointError
from v2xpnp_desk.shared.types import MetricsRow, ModelConfig, Scenario
from v2xpnp_desk.strategies.io import write_frame_results
from v2xpnp_desk.strategies.pipeline import run_pipeline
from v2xpnp_desk.trainer import train

logger = logging.getLogger(__name__)

POINTS_DIR = "points"
METRICS_FILE = "metrics.csv"
CHECKPOINT_SUFFIX = ".ckpt"


def point_slug(label: str) -> str:
    """Filesystem-safe directory name of a sweep point."""
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", label).strip("_")


def point_rng(seed: int, label: str) -> np.random.Generator:
    """Channel randomness for one (point, seed); stable across processes."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


def checkpoint_path(directory: str | Path, model: ModelConfig) -> Path:
    return Path(directory) / f"{model_tag(model)}{CHECKPOINT_SUFFIX}"


def with_seeds(config: ExperimentConfig, count: int | None) -> ExperimentConfig:
    """Replace the evaluation seeds by 0..count-1."""
    if count is None:
        return config
    suite = config.suite.model_copy(update={"eval_seeds": list(range(count))})
    return config.model_copy(update={"suite": suite})


# ====================================================================================
# Scenarios
# ====================================================================================


def scenario_suite(config: ExperimentConfig, seeds: list[int]) -> list[Scenario]:
    return [generate_scenario(config.suite.scenario, seed) for seed in seeds]


def generate_scenarios(config: ExperimentConfig, out_dir: str | Path) -> list[Path]:
    """Write `scenario_<seed>.json` for every evaluation seed."""
    out_dir = Path(out_dir)
    paths = []
    for seed in config.suite.eval_seeds:
        scenario = generate_scenario(config.suite.scenario, seed)
        paths.append(save_scenario(scenario, out_dir / f"scenario_{seed}.json"))
    logger.info(f"Generated {len(paths)} scenarios in {out_dir}")
    return paths


# ====================================================================================
# Training
# ====================================================================================


def distinct_models(config: ExperimentConfig) -> list[ModelConfig]:
    """Model variants of the sweep, first occurrence order."""
    seen: dict[str, ModelConfig] = {}
    for point in expand_sweep(config):
        seen.setdefault(model_tag(point.model), point.model)
    return list(seen.values())


def train_models(config: ExperimentConfig, checkpoint_dir: str | Path) -> list[Path]:
    """
    Train one model per sweep variant on the training suite.

    Writes `<tag>.ckpt` with its config sidecar and `<tag>.training_log.csv`.
    """
    checkpoint_dir = Path(checkpoint_dir)
    scenarios = scenario_suite(config, config.suite.train_seeds)
    holdout = scenario_suite(config, config.suite.holdout_seeds)
    paths = []
    for model_config in distinct_models(config):
        tag = model_tag(model_config)
        logger.info(f"Training model {tag} on {len(scenarios)} scenarios")
        model = V2XPnPModel(model_config)
        result = train(
            model,
            scenarios,
            config.schedule,
            np.random.default_rng(model_config.seed),
            holdout=holdout,
            log_path=checkpoint_dir / f"{tag}.{TRAINING_LOG_FILE}",
            ego_id=config.suite.ego_id,
        )
        if result.stopped_early:
            stages = ", ".join(result.stopped_early)
            logger.info(f"{tag}: early stop in stages {stages}")
        paths.append(save_model(model, checkpoint_path(checkpoint_dir, model_config)))
    return paths


# ====================================================================================
# Evaluation
# ====================================================================================


def point_model(config: ExperimentConfig, point: SweepPoint) -> V2XPnPModel:
    """
    The checkpoint of the point's model variant, or an untrained model when
    the experiment names no checkpoint directory.

    Raises:
        CheckpointError: If the checkpoint is missing or its config differs.
    """
    if config.checkpoint_dir is None:
        logger.warning(f"{point.label}: no checkpoint_dir, using an untrained model")
        return V2XPnPModel(point.model)
    path = checkpoint_path(config.checkpoint_dir, point.model)
    if not path.exists():
        raise CheckpointError(f"checkpoint for {point.label} not found: {path}")
    return load_model(path, expected=point.model)


def run_point(
    config: ExperimentConfig, point: SweepPoint, out_dir: Path
) -> list[MetricsRow]:
    """Evaluate one sweep point over every evaluation seed."""
    point_dir = out_dir / POINTS_DIR / point_slug(point.label)
    model = point_model(config, point)
    ego_id = config.suite.ego_id
    rows = []
    for seed in config.suite.eval_seeds:
        scenario = generate_scenario(config.suite.scenario, seed)
        results = run_pipeline(
            scenario, ego_id, point.pipeline, model, point_rng(seed, point.label)
        )
        write_frame_results(results, point_dir / f"seed_{seed}")
        rows.append(
            evaluate_run(
                results,
                point.pipeline.strategy,
                seed,
                config.metrics,
                scenario.occluded_object_ids,
                point.label,
            )
        )
    write_metrics_csv(rows, point_dir / METRICS_FILE)
    return rows


def _run_point_job(job: tuple[ExperimentConfig, SweepPoint, Path]) -> list[MetricsRow]:
    config, point, out_dir = job
    return run_point(config, point, out_dir)


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    resume: bool = False,
) -> Path:
    """
    Evaluate every sweep point and merge the rows into `<out>/metrics.csv`.

    Args:
        config (ExperimentConfig): Validated experiment.
        out_dir: Output directory; defaults to the config's.
        jobs (int): Worker processes for sweep points.
        resume (bool): Reuse points whose metrics file already exists.

    Returns:
        Path: The merged metrics CSV.
    """
    out_dir = Path(out_dir or config.output_dir)
    points = expand_sweep(config)
    done: dict[str, list[MetricsRow]] = {}
    pending = []
    for point in points:
        existing = out_dir / POINTS_DIR / point_slug(point.label) / METRICS_FILE
        if resume and existing.exists():
            logger.info(f"Resuming: {point.label} already evaluated")
            done[point.label] = read_metrics_csv(existing)
        else:
            pending.append(point)

    jobs_list = [(config, point, out_dir) for point in pending]
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_point_job, jobs_list))
    else:
        outcomes = []
        for job in jobs_list:
            logger.info(f"Sweep point {job[1].label}")
            outcomes.append(_run_point_job(job))
    for point, rows in zip(pending, outcomes, strict=True):
        done[point.label] = rows

    merged = [row for point in points for row in done[point.label]]
    path = write_metrics_csv(merged, out_dir / METRICS_FILE)
    seeds = len(config.suite.eval_seeds)
    logger.info(f"{len(points)} sweep points x {seeds} seeds -> {path}")
    return path
