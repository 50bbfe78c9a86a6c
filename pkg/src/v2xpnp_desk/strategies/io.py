"""
Persist one pipeline run: detections JSON lines plus the communication log.
"""

from collections.abc import Sequence
from pathlib import Path

from v2xpnp_desk.comms.log import write_comm_log
from v2xpnp_desk.perception.io import DetectionRecord, write_detections
from v2xpnp_desk.strategies.pipeline import FrameResult

DETECTIONS_FILE = "detections.jsonl"
COMM_LOG_FILE = "comm_log.csv"


def write_frame_results(results: Sequence[FrameResult], directory: str | Path) -> Path:
    """
    Write `detections.jsonl` and `comm_log.csv` under `directory`.

    Returns:
        Path: The directory.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = (
        DetectionRecord(r.frame, r.ego_id, r.detections, r.trajectories)
        for r in results
    )
    write_detections(records, directory / DETECTIONS_FILE)
    write_comm_log((e for r in results for e in r.comm_log), directory / COMM_LOG_FILE)
    return directory
