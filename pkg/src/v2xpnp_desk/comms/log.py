"""
Communication log CSV.
"""

import csv
import io
from collections.abc import Iterable
from pathlib import Path

from v2xpnp_desk.shared.types import CommLogEntry
from v2xpnp_desk.shared.utils import atomic_write_text

COMM_LOG_FIELDS = list(CommLogEntry.model_fields)


def write_comm_log(entries: Iterable[CommLogEntry], filepath: str | Path) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=COMM_LOG_FIELDS)
    writer.writeheader()
    for entry in entries:
        writer.writerow(entry.model_dump(mode="json"))
    return atomic_write_text(filepath, buffer.getvalue())


def read_comm_log(filepath: str | Path) -> list[CommLogEntry]:
    with open(filepath, newline="") as f:
        rows = list(csv.DictReader(f))
    # Pydantic coerces the CSV strings ("True", "12") back to typed fields
    return [CommLogEntry.model_validate(_typed(row)) for row in rows]


def _typed(row: dict[str, str]) -> dict[str, object]:
    out: dict[str, object] = dict(row)
    out["dropped"] = row["dropped"] == "True"
    return out
