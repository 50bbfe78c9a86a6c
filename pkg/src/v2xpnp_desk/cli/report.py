"""
Summary reports: merge metrics CSVs and aggregate over seeds.
"""

import csv
import io
import json
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from v2xpnp_desk.metrics.io import read_metrics_csv
from v2xpnp_desk.shared.errors import MetricError
from v2xpnp_desk.shared.types import MetricsRow
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)

SUMMARY_CSV = "summary.csv"
SUMMARY_JSON = "summary.json"
AGGREGATED_METRICS = (
    "ap50",
    "ade",
    "fde",
    "mr",
    "epa",
    "occluded_recall",
    "false_negatives",
    "bits_tx_total",
    "mean_delay_ms",
)


class MetricSummary(BaseModel):
    mean: float | None
    std: float | None
    count: int


class PointSummary(BaseModel):
    """Mean and population std of each metric over the seeds of one point."""

    point: str
    strategy: str
    seeds: list[int]
    metrics: dict[str, MetricSummary]


def _summarize(values: list[float]) -> MetricSummary:
    if not values:
        return MetricSummary(mean=None, std=None, count=0)
    array = np.asarray(values, dtype=np.float64)
    return MetricSummary(
        mean=float(array.mean()), std=float(array.std()), count=len(values)
    )


def summarize(rows: Iterable[MetricsRow]) -> list[PointSummary]:
    """
    Group rows by (point, strategy) in first-seen order.

    Metrics undefined for a seed (empty cells) are left out of that metric's
    statistics.
    """
    groups: dict[tuple[str, str], list[MetricsRow]] = {}
    for row in rows:
        groups.setdefault((row.point, str(row.strategy)), []).append(row)
    summaries = []
    for (point, strategy), members in groups.items():
        metrics = {
            name: _summarize(
                [float(v) for r in members if (v := getattr(r, name)) is not None]
            )
            for name in AGGREGATED_METRICS
        }
        summaries.append(
            PointSummary(
                point=point,
                strategy=strategy,
                seeds=[r.seed for r in members],
                metrics=metrics,
            )
        )
    return summaries


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_summary(summaries: Sequence[PointSummary], out_dir: str | Path) -> Path:
    """Write `summary.csv` and `summary.json` under `out_dir`."""
    out_dir = Path(out_dir)
    fields = ["point", "strategy", "seeds"]
    for name in AGGREGATED_METRICS:
        fields += [f"{name}_mean", f"{name}_std"]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for summary in summaries:
        record = {
            "point": summary.point,
            "strategy": summary.strategy,
            "seeds": str(len(summary.seeds)),
        }
        for name, stats in summary.metrics.items():
            record[f"{name}_mean"] = _cell(stats.mean)
            record[f"{name}_std"] = _cell(stats.std)
        writer.writerow(record)
    path = atomic_write_text(out_dir / SUMMARY_CSV, buffer.getvalue())
    payload = [s.model_dump(mode="json") for s in summaries]
    atomic_write_text(
        out_dir / SUMMARY_JSON, json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    logger.info(f"Wrote summary of {len(summaries)} sweep points to {out_dir}")
    return path


def build_report(inputs: Sequence[str | Path], out_dir: str | Path) -> Path:
    """
    Merge metrics CSVs and write the summary.

    Raises:
        MetricError: If no input is given or an input is missing or malformed.
    """
    if not inputs:
        raise MetricError("report needs at least one metrics CSV")
    rows = [row for path in inputs for row in read_metrics_csv(path)]
    logger.info(f"Merged {len(rows)} metrics rows from {len(inputs)} files")
    return write_summary(summarize(rows), out_dir)
