"""
JSON-lines persistence of per-frame detections and trajectories.

One line per (frame, agent): the detections with their 6-point futures.
"""

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from pydantic import ValidationError

from v2xpnp_desk.shared.errors import ScenarioError
from v2xpnp_desk.shared.types import Detection, PredictedTrajectory
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)


def _future_points(trajectory: PredictedTrajectory | None) -> list[list[float]] | None:
    return None if trajectory is None else [list(p) for p in trajectory.points]


@dataclass(frozen=True)
class DetectionRecord:
    frame: int
    agent: int
    detections: Sequence[Detection]
    trajectories: Sequence[PredictedTrajectory | None]

    def to_json(self) -> str:
        return json.dumps(
            {
                "frame": self.frame,
                "agent": self.agent,
                "detections": [
                    {**det.model_dump(mode="json"), "future": _future_points(traj)}
                    for det, traj in zip(
                        self.detections, self.trajectories, strict=True
                    )
                ],
            }
        )


def write_detections(records: Iterable[DetectionRecord], filepath: str | Path) -> Path:
    lines = [record.to_json() for record in records]
    path = atomic_write_text(filepath, "\n".join(lines) + ("\n" if lines else ""))
    logger.info(f"Wrote {len(lines)} detection records to {path}")
    return path


def read_detections(filepath: str | Path) -> list[DetectionRecord]:
    """
    Raises:
        ScenarioError: If the file is missing or a line is malformed.
    """
    path = Path(filepath)
    if not path.exists():
        raise ScenarioError(f"Detections file not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            detections, trajectories = [], []
            for item in raw["detections"]:
                future = item.pop("future", None)
                detections.append(Detection.model_validate(item))
                trajectories.append(
                    None if future is None else PredictedTrajectory(points=future)
                )
            records.append(
                DetectionRecord(
                    int(raw["frame"]), int(raw["agent"]), detections, trajectories
                )
            )
        except (json.JSONDecodeError, KeyError, ValidationError) as e:
            raise ScenarioError(
                f"{path}:{lineno}: malformed detection record: {e}"
            ) from e
    return records
