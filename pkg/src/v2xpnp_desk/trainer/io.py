"""
Training log CSV: one row per stage epoch.
"""

import csv
import io
import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

from v2xpnp_desk.shared.errors import TrainingError
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)

TRAINING_LOG_FIELDS = [
    "stage",
    "epoch",
    "L_cla",
    "L_reg",
    "L_pred",
    "total",
    "lr",
    "w_pred",
]


@dataclass(frozen=True)
class EpochRecord:
    """Mean training losses of one epoch; `holdout` is not written to the log."""

    stage: str
    epoch: int
    l_cla: float
    l_reg: float
    l_pred: float
    total: float
    lr: float
    w_pred: float
    holdout: float | None = None

    def row(self) -> dict[str, str]:
        values = (
            self.stage,
            self.epoch,
            self.l_cla,
            self.l_reg,
            self.l_pred,
            self.total,
            self.lr,
            self.w_pred,
        )
        return {k: str(v) for k, v in zip(TRAINING_LOG_FIELDS, values, strict=True)}


def write_training_log(records: Iterable[EpochRecord], filepath: str | Path) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=TRAINING_LOG_FIELDS, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record.row())
    path = atomic_write_text(filepath, buffer.getvalue())
    logger.info(f"Wrote training log to {path}")
    return path


def read_training_log(filepath: str | Path) -> list[EpochRecord]:
    """
    Raises:
        TrainingError: If the file is missing or a row is malformed.
    """
    path = Path(filepath)
    if not path.exists():
        raise TrainingError(f"Training log not found: {path}")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    records = []
    for lineno, row in enumerate(rows, start=2):
        try:
            records.append(
                EpochRecord(
                    stage=row["stage"],
                    epoch=int(row["epoch"]),
                    l_cla=float(row["L_cla"]),
                    l_reg=float(row["L_reg"]),
                    l_pred=float(row["L_pred"]),
                    total=float(row["total"]),
                    lr=float(row["lr"]),
                    w_pred=float(row["w_pred"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise TrainingError(f"{path}:{lineno}: malformed log row: {e}") from e
    return records
