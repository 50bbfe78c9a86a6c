"""
Entry point for V2XPnP Desk experiments.

Usage:
    uv run -m v2xpnp_desk.cli [command]
    # or after install:
    v2xpnp [command]

Commands:
    gen-scenarios - Write the evaluation scenario suite as JSON
    train         - Train one model per sweep variant
    eval          - Run the sweep and write per-point metrics
    assoc         - Assign global track ids to an annotation file
    report        - Merge metrics CSVs into a summary
"""

import argparse
import logging
import os
import sys

from pydantic import ValidationError

from v2xpnp_desk.shared.constants import CROSS_AGENT_IOU
from v2xpnp_desk.shared.errors import V2XPnPError

logger = logging.getLogger(__name__)

LOG_ENV_VAR = "V2XPNP_LOG"
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def _env_log_level() -> tuple[str, str | None]:
    """Level from $V2XPNP_LOG, or INFO plus the rejected value."""
    value = os.environ.get(LOG_ENV_VAR, "INFO").strip().upper()
    if value in LOG_LEVELS:
        return value, None
    return "INFO", value


def _load_config(args):
    from v2xpnp_desk.cli.config import load_experiment_config, preset_config
    from v2xpnp_desk.cli.experiment import with_seeds

    if args.preset is not None:
        config = preset_config(args.preset)
    else:
        config = load_experiment_config(args.config)
    config = with_seeds(config, args.seeds)
    if getattr(args, "checkpoint_dir", None) is not None:
        config = config.model_copy(update={"checkpoint_dir": args.checkpoint_dir})
    return config


def _out_dir(args, config) -> str:
    return args.out or config.output_dir


def cmd_gen_scenarios(args) -> int:
    """Write scenario JSON files and optionally their annotations."""
    from pathlib import Path

    from v2xpnp_desk.cli.experiment import generate_scenarios
    from v2xpnp_desk.scenario.io import load_scenario
    from v2xpnp_desk.scenario.truth import annotate
    from v2xpnp_desk.trackassoc.io import write_annotations

    config = _load_config(args)
    out_dir = Path(_out_dir(args, config)) / "scenarios"
    for path in generate_scenarios(config, out_dir):
        if args.annotations:
            scenario = load_scenario(path)
            records = [
                record
                for frame in range(scenario.num_frames)
                for agent in scenario.agents
                for record in annotate(scenario, agent.agent_id, frame)
            ]
            write_annotations(records, path.with_suffix(".annotations.jsonl"))
        print(path)
    return 0


def cmd_train(args) -> int:
    """Train and checkpoint every model variant of the sweep."""
    from pathlib import Path

    from v2xpnp_desk.cli.experiment import train_models
    from v2xpnp_desk.trainer.schedule import TrainSchedule

    config = _load_config(args)
    if args.epochs is not None:
        schedule = TrainSchedule.with_epochs(
            args.epochs,
            **config.schedule.model_dump(exclude={"stages", "predictor_epochs"}),
        )
        config = config.model_copy(update={"schedule": schedule})
    checkpoint_dir = config.checkpoint_dir or str(
        Path(_out_dir(args, config)) / "checkpoints"
    )
    for path in train_models(config, checkpoint_dir):
        print(path)
    return 0


def cmd_eval(args) -> int:
    """Evaluate every sweep point."""
    from v2xpnp_desk.cli.experiment import run_experiment

    config = _load_config(args)
    path = run_experiment(config, _out_dir(args, config), args.jobs, args.resume)
    print(path)
    return 0


def cmd_assoc(args) -> int:
    """Associate annotations into global tracks."""
    from v2xpnp_desk.trackassoc import associate, read_annotations, write_annotations

    tracked = associate(
        read_annotations(args.input), args.iou, args.temporal_iou_fallback
    )
    path = write_annotations(tracked, args.out)
    tracks = len({t.global_track_id for t in tracked})
    print(f"{path}: {len(tracked)} annotations, {tracks} global tracks")
    return 0


def cmd_report(args) -> int:
    """Merge metrics CSVs into summary.csv and summary.json."""
    from v2xpnp_desk.cli.report import build_report

    print(build_report(args.inputs, args.out))
    return 0


def _add_config_options(parser: argparse.ArgumentParser, sweep: bool = False) -> None:
    from v2xpnp_desk.cli.config import PRESET_NAMES

    source = parser.add_mutually_exclusive_group()
    source.add_argument(
        "--config",
        default=None,
        help="Experiment config JSON (default: $V2XPNP_CONFIG, else the default path)",
    )
    source.add_argument(
        "--preset", choices=PRESET_NAMES, default=None, help="Built-in experiment"
    )
    parser.add_argument(
        "--out", default=None, help="Output directory (default: the config's)"
    )
    parser.add_argument(
        "--seeds",
        type=int,
        default=None,
        help="Evaluate seeds 0..N-1 instead of the config's",
    )
    if sweep:
        parser.add_argument(
            "--checkpoint-dir",
            default=None,
            help="Directory of <model tag>.ckpt files (overrides the config)",
        )


def _report_validation_error(error: ValidationError) -> None:
    print(f"Invalid configuration ({error.title}):", file=sys.stderr)
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "<root>"
        print(f"  {field}: {item['msg']}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    """Main entry point for experiment tools."""
    parser = argparse.ArgumentParser(
        description="V2XPnP Desk cooperative perception and prediction experiments",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        epilog="""
Commands:
    gen-scenarios  Write scenario JSON (and annotation) files
    train          Train checkpoints and training logs per model variant
    eval           Run the sweep; per-point metrics, detections and comms logs
    assoc          Global track ids for a JSON-lines annotation file
    report         Means and stds over seeds from metrics CSVs

Examples:
    v2xpnp train --preset ablation --out runs/ablation
    v2xpnp eval --preset ablation --checkpoint-dir runs/ablation/checkpoints
    v2xpnp eval --config configs/experiment.json --seeds 5 --jobs 4 --resume
    v2xpnp assoc annotations.jsonl --out tracks.jsonl
    v2xpnp report runs/metrics.csv --out runs
        """,
    )

    env_level, rejected = _env_log_level()
    parser.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default=env_level,
        help="Logging level (default from $V2XPNP_LOG)",
    )

    subparsers = parser.add_subparsers(dest="command", help="Experiment commands")

    gen_parser = subparsers.add_parser(
        "gen-scenarios",
        help="Write the evaluation scenario suite",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_config_options(gen_parser)
    gen_parser.add_argument(
        "--annotations",
        action="store_true",
        help="Also write per-agent box annotations as JSON lines",
    )
    gen_parser.set_defaults(func=cmd_gen_scenarios)

    train_parser = subparsers.add_parser(
        "train",
        help="Train one model per sweep variant",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_config_options(train_parser, sweep=True)
    train_parser.add_argument(
        "--epochs", type=int, default=None, help="Epochs for every stage"
    )
    train_parser.set_defaults(func=cmd_train)

    eval_parser = subparsers.add_parser(
        "eval",
        help="Run the sweep and write metrics",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_config_options(eval_parser, sweep=True)
    eval_parser.add_argument(
        "--jobs", "-j", type=int, default=1, help="Worker processes for sweep points"
    )
    eval_parser.add_argument(
        "--resume", action="store_true", help="Skip points already evaluated"
    )
    eval_parser.set_defaults(func=cmd_eval)

    assoc_parser = subparsers.add_parser(
        "assoc",
        help="Assign global track ids to annotations",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    assoc_parser.add_argument("input", help="JSON-lines annotation file")
    assoc_parser.add_argument("--out", "-o", required=True, help="Output JSON lines")
    assoc_parser.add_argument(
        "--iou",
        type=float,
        default=CROSS_AGENT_IOU,
        help="Cross-agent IoU threshold",
    )
    assoc_parser.add_argument(
        "--temporal-iou-fallback",
        type=float,
        default=None,
        help="Link consecutive frames by IoU when local ids are missing",
    )
    assoc_parser.set_defaults(func=cmd_assoc)

    report_parser = subparsers.add_parser(
        "report",
        help="Summarize metrics CSVs",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    report_parser.add_argument("inputs", nargs="+", help="Metrics CSV files")
    report_parser.add_argument("--out", "-o", default=".", help="Output directory")
    report_parser.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    if rejected is not None:
        logger.warning(
            f"Ignoring {LOG_ENV_VAR}={rejected!r}; expected one of {LOG_LEVELS}"
        )

    if args.command is None:
        parser.print_help()
        return 1

    try:
        return args.func(args)
    except ValidationError as e:
        _report_validation_error(e)
        return 2
    except V2XPnPError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
