"""
Metrics report CSV, one MetricsRow per line.
"""

import csv
import io
import logging
from collections.abc import Iterable
from pathlib import Path

from pydantic import ValidationError

from v2xpnp_desk.shared.errors import MetricError
from v2xpnp_desk.shared.types import MetricsRow
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)

METRICS_FIELDS = list(MetricsRow.model_fields)


def write_metrics_csv(rows: Iterable[MetricsRow], filepath: str | Path) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=METRICS_FIELDS, lineterminator="\n")
    writer.writeheader()
    count = 0
    for row in rows:
        writer.writerow(row.model_dump(mode="json"))
        count += 1
    path = atomic_write_text(filepath, buffer.getvalue())
    logger.info(f"Wrote {count} metrics rows to {path}")
    return path


def read_metrics_csv(filepath: str | Path) -> list[MetricsRow]:
    """
    Raises:
        MetricError: If the file is missing or a row does not validate.
    """
    path = Path(filepath)
    if not path.exists():
        raise MetricError(f"Metrics file not found: {path}")
    with open(path, newline="") as f:
        raw = list(csv.DictReader(f))
    rows = []
    for lineno, row in enumerate(raw, start=2):
        # Empty cells are metrics that were undefined for the run
        values = {k: (None if v == "" and k != "point" else v) for k, v in row.items()}
        try:
            rows.append(MetricsRow.model_validate(values))
        except ValidationError as e:
            raise MetricError(f"{path}:{lineno}: malformed metrics row: {e}") from e
    return rows
