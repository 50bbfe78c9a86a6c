"""
Detection and prediction evaluation: AP, ADE/FDE/MR and EPA.
"""

from v2xpnp_desk.metrics.accumulate import MetricsAccumulator, evaluate_run
from v2xpnp_desk.metrics.detection import (
    MatchResult,
    average_precision,
    average_precision_from_outcomes,
    detection_outcomes,
    match_detections,
    precision_recall,
)
from v2xpnp_desk.metrics.io import read_metrics_csv, write_metrics_csv
from v2xpnp_desk.metrics.prediction import (
    DisplacementMetrics,
    count_hits,
    displacement_errors,
    displacement_metrics,
    epa,
    epa_score,
)

__all__ = [
    "DisplacementMetrics",
    "MatchResult",
    "MetricsAccumulator",
    "average_precision",
    "average_precision_from_outcomes",
    "count_hits",
    "detection_outcomes",
    "displacement_errors",
    "displacement_metrics",
    "epa",
    "epa_score",
    "evaluate_run",
    "match_detections",
    "precision_recall",
    "read_metrics_csv",
    "write_metrics_csv",
]
