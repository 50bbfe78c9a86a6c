"""
Fusion strategies run end to end for one ego.
"""

from v2xpnp_desk.strategies.io import write_frame_results
from v2xpnp_desk.strategies.late import (
    Track,
    ideal_track_and_predict,
    late_fusion_merge,
    move_detections,
    track_detections,
)
from v2xpnp_desk.strategies.pipeline import (
    FrameResult,
    PipelineRun,
    default_eval_frames,
    run_pipeline,
)

__all__ = [
    "FrameResult",
    "PipelineRun",
    "Track",
    "default_eval_frames",
    "ideal_track_and_predict",
    "late_fusion_merge",
    "move_detections",
    "run_pipeline",
    "track_detections",
    "write_frame_results",
]
