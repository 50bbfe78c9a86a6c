"""
Run-level reduction of per-frame results.

AP pools every frame's detections by confidence; ADE, FDE and MR average
over all matched pairs; EPA sums hits, false positives and ground truth
counts over frames before dividing.
"""

import logging
from collections import defaultdict
from collections.abc import Iterable

import numpy as np

from v2xpnp_desk.metrics.detection import (
    average_precision_from_outcomes,
    detection_outcomes,
    match_detections,
)
from v2xpnp_desk.metrics.prediction import (
    count_hits,
    displacement_errors,
    epa_score,
    reduce_displacement,
)
from v2xpnp_desk.shared.errors import MetricError
from v2xpnp_desk.shared.types import FusionStrategy, MetricsConfig, MetricsRow
from v2xpnp_desk.strategies.pipeline import FrameResult

logger = logging.getLogger(__name__)


class MetricsAccumulator:
    """
    Collects FrameResults of one run and reduces them to a MetricsRow.

    Args:
        config (MetricsConfig): Thresholds.
        occluded_ids (Iterable[int]): Objects whose recall is reported on its own.
    """

    def __init__(
        self, config: MetricsConfig | None = None, occluded_ids: Iterable[int] = ()
    ) -> None:
        self.config = config or MetricsConfig()
        self.occluded_ids = {int(i) for i in occluded_ids}
        self.frames = 0
        self.scores: list[np.ndarray] = []
        self.true_positive: list[np.ndarray] = []
        self.num_gt = 0
        self.ade: list[np.ndarray] = []
        self.fde: list[np.ndarray] = []
        self.hits = 0
        self.false_positives = 0
        self.false_negatives = 0
        self.occluded_seen = 0
        self.occluded_found = 0
        self.bits = 0
        self.delays: dict[tuple[int, int, int], float] = defaultdict(float)

    def add(self, result: FrameResult) -> None:
        gt = result.gt
        if gt is None:
            raise MetricError(f"frame {result.frame} has no ground truth attached")
        cfg = self.config
        self.frames += 1

        confidences = [d.confidence for d in result.detections]
        self.scores.append(np.array(confidences, dtype=np.float64))
        self.true_positive.append(
            detection_outcomes(result.detections, gt.boxes, cfg.ap_iou)
        )
        self.num_gt += len(gt)

        match = match_detections(result.detections, gt.boxes, cfg.ap_iou)
        det_idx, gt_idx = match.pairs[:, 0], match.pairs[:, 1]
        if det_idx.size:
            predicted = np.stack(
                [result.trajectories[d].points_array() for d in det_idx]
            )
            ade, fde = displacement_errors(
                predicted, gt.futures[gt_idx], gt.future_mask[gt_idx]
            )
        else:
            ade = fde = np.zeros(0)
        self.ade.append(ade)
        self.fde.append(fde)
        self.hits += count_hits(fde, cfg.epa_threshold_m)
        self.false_positives += match.false_positives
        self.false_negatives += int(match.unmatched_gt.shape[0])

        matched_ids = {int(gt.object_ids[g]) for g in gt_idx}
        for object_id in gt.object_ids:
            if int(object_id) in self.occluded_ids:
                self.occluded_seen += 1
                self.occluded_found += int(int(object_id) in matched_ids)

        self.bits += result.bits
        for entry in result.comm_log:
            if not entry.dropped:
                # Stamp delays of one message add up
                key = (entry.frame, entry.sender, entry.receiver)
                self.delays[key] += entry.delay_ms

    def row(self, strategy: FusionStrategy, seed: int, point: str = "") -> MetricsRow:
        scores = np.concatenate(self.scores) if self.scores else np.zeros(0)
        tp = (
            np.concatenate(self.true_positive)
            if self.true_positive
            else np.zeros(0, dtype=bool)
        )
        ade = np.concatenate(self.ade) if self.ade else np.zeros(0)
        fde = np.concatenate(self.fde) if self.fde else np.zeros(0)

        ade_m = fde_m = mr = None
        if np.isfinite(fde).any():
            reduced = reduce_displacement(ade, fde, self.config.miss_threshold_m)
            ade_m, fde_m, mr = reduced.ade, reduced.fde, reduced.miss_rate

        epa_value = None
        if self.num_gt:
            epa_value = epa_score(
                self.hits,
                self.false_positives,
                self.num_gt,
                self.config.epa_false_positive_penalty,
            )

        row = MetricsRow(
            strategy=strategy,
            seed=seed,
            point=point,
            frames=self.frames,
            ap50=average_precision_from_outcomes(scores, tp, self.num_gt),
            ade=ade_m,
            fde=fde_m,
            mr=mr,
            epa=epa_value,
            false_negatives=self.false_negatives,
            occluded_recall=(
                self.occluded_found / self.occluded_seen if self.occluded_seen else None
            ),
            bits_tx_total=self.bits,
            mean_delay_ms=(
                float(np.mean(list(self.delays.values()))) if self.delays else 0.0
            ),
        )
        logger.debug(
            f"{strategy} seed {seed} {point}: AP50 {row.ap50:.3f}, EPA {row.epa}"
        )
        return row


def evaluate_run(
    results: Iterable[FrameResult],
    strategy: FusionStrategy,
    seed: int,
    config: MetricsConfig | None = None,
    occluded_ids: Iterable[int] = (),
    point: str = "",
) -> MetricsRow:
    """Reduce the frames of one run to its metrics row."""
    accumulator = MetricsAccumulator(config, occluded_ids)
    for result in results:
        accumulator.add(result)
    return accumulator.row(strategy, seed, point)
