"""
Tests for metrics/ - matching, AP, displacement metrics, EPA and run reduction.

Tests cover:
- Greedy one-to-one matching at IoU 0.5
- All-point interpolated AP against a hand-built PR curve
- ADE, FDE and miss rate on matched objects
- EPA arithmetic, strict hit threshold and the no-ground-truth error
- EPA on random frames against an exhaustive pairwise scan
- Pooling frames into a metrics row and the report CSV
"""

import math

import numpy as np
import pytest

from tests.conftest import make_box, make_detection
from v2xpnp_desk.metrics.accumulate import MetricsAccumulator, evaluate_run
from v2xpnp_desk.metrics.detection import (
    average_precision,
    average_precision_from_outcomes,
    detection_outcomes,
    match_detections,
)
from v2xpnp_desk.metrics.io import read_metrics_csv, write_metrics_csv
from v2xpnp_desk.metrics.prediction import (
    count_hits,
    displacement_errors,
    displacement_metrics,
    epa,
    epa_score,
)
from v2xpnp_desk.perception.geometry import rotated_iou
from v2xpnp_desk.scenario.truth import GroundTruthFrame
from v2xpnp_desk.shared.errors import MetricError, ShapeError
from v2xpnp_desk.shared.types import (
    CommLogEntry,
    FusionStrategy,
    MetricsConfig,
    PredictedTrajectory,
)
from v2xpnp_desk.strategies.pipeline import FrameResult


def _gt(centers, futures=None, object_ids=None, frame=4):
    boxes = np.array([make_box(x, y) for x, y in centers]).reshape(-1, 7)
    n = boxes.shape[0]
    if futures is None:
        futures = np.zeros((n, 6, 2))
    return GroundTruthFrame(
        frame=frame,
        ego_id=0,
        object_ids=np.array(
            object_ids if object_ids is not None else range(n), dtype=np.int64
        ),
        boxes=boxes,
        futures=np.asarray(futures, dtype=np.float64).reshape(n, 6, 2),
        future_mask=np.ones((n, 6), dtype=bool),
    )


def _straight(x0, y0, step=1.0):
    return np.stack([x0 + step * np.arange(1, 7), np.full(6, y0)], axis=1)


def _trajectory(points):
    return PredictedTrajectory(points=tuple((float(x), float(y)) for x, y in points))


def _random_box(rng):
    return make_box(rng.uniform(0, 40), rng.uniform(-10, 10), rng.uniform(-3, 3))


def _random_frame(rng):
    """Up to 10 objects and 15 detections, jittered copies mixed with clutter."""
    n_gt = int(rng.integers(1, 11))
    gt_boxes = np.stack([_random_box(rng) for _ in range(n_gt)])
    gt_final = gt_boxes[:, :2] + rng.uniform(-15, 15, (n_gt, 2))
    det_boxes, det_final = [], []
    for source in rng.integers(-1, n_gt, int(rng.integers(0, 16))):
        if source < 0:
            box = _random_box(rng)
            final = box[:2] + rng.uniform(-15, 15, 2)
        else:
            noise = np.r_[rng.normal(0, 0.5, 2), 0, 0, 0, 0, 0.1 * rng.normal()]
            box = gt_boxes[source] + noise
            final = gt_final[source] + rng.normal(0, 1.5, 2)
        det_boxes.append(box)
        det_final.append(final)
    return (
        np.array(det_boxes).reshape(-1, 7),
        np.array(det_final).reshape(-1, 2),
        gt_boxes,
        gt_final,
    )


def _exhaustive_epa(det_boxes, det_final, gt_boxes, gt_final):
    """Scan every free pair for the best IoU until none reaches 0.5, then score."""
    iou = {
        (d, g): rotated_iou(det_boxes[d], gt_boxes[g])
        for d in range(len(det_boxes))
        for g in range(len(gt_boxes))
    }
    free_d, free_g = set(range(len(det_boxes))), set(range(len(gt_boxes)))
    hits = 0
    while True:
        best = None
        for d in sorted(free_d):
            for g in sorted(free_g):
                if iou[d, g] >= 0.5 and (best is None or iou[d, g] > iou[best]):
                    best = (d, g)
        if best is None:
            break
        d, g = best
        free_d.discard(d)
        free_g.discard(g)
        hits += math.dist(det_final[d], gt_final[g]) < 2.0
    return (hits - 0.5 * len(free_d)) / len(gt_boxes)


class TestMatching:
    """Tests for greedy detection matching."""

    def test_best_overlap_wins(self):
        """The exact box takes the object; the shifted duplicate is a false positive."""
        detections = [make_detection(0.3, 0.0), make_detection(0.0, 0.0)]
        match = match_detections(detections, _gt([(0.0, 0.0)]).boxes)
        np.testing.assert_array_equal(match.pairs, [[1, 0]])
        np.testing.assert_array_equal(match.unmatched_detections, [0])
        assert match.unmatched_gt.size == 0
        assert match.ious[0] == pytest.approx(1.0)

    def test_low_overlap_is_not_a_match(self):
        """A box 3 m off along its length overlaps below 0.5."""
        match = match_detections([make_detection(3.0, 0.0)], _gt([(0.0, 0.0)]).boxes)
        assert match.pairs.shape == (0, 2)
        assert match.num_gt == 1
        assert match.false_positives == 1

    def test_matches_are_one_to_one(self):
        """Every detection and every object appears in at most one pair."""
        detections = [make_detection(x, 0.0) for x in (0.0, 0.2, 10.0, 10.1)]
        match = match_detections(detections, _gt([(0.1, 0.0), (10.0, 0.0)]).boxes)
        assert len(set(match.pairs[:, 0])) == len(match.pairs)
        assert len(set(match.pairs[:, 1])) == len(match.pairs) == 2
        assert (match.ious >= 0.5).all()


class TestAveragePrecision:
    """Tests for all-point interpolated AP."""

    def test_perfect_detections(self):
        """Every object found once with nothing else gives 1."""
        gt = _gt([(0.0, 0.0), (20.0, 0.0)])
        detections = [make_detection(0.0, 0.0, 0.9), make_detection(20.0, 0.0, 0.8)]
        assert average_precision(detections, gt.boxes) == pytest.approx(1.0)

    def test_no_detections(self):
        """Missing everything gives 0."""
        assert average_precision([], _gt([(0.0, 0.0)]).boxes) == 0.0

    def test_empty_frame(self):
        """No objects and no detections counts as perfect."""
        assert average_precision([], _gt([]).boxes) == 1.0

    def test_detections_without_objects(self):
        """Detections where nothing exists give 0."""
        assert average_precision([make_detection(0.0, 0.0)], _gt([]).boxes) == 0.0

    def test_hand_built_curve(self):
        """Ranking [TP, FP, TP] over 2 objects: 0.5 * 1 + 0.5 * 2/3."""
        gt = _gt([(0.0, 0.0), (20.0, 0.0)])
        detections = [
            make_detection(0.0, 0.0, 0.9),
            make_detection(50.0, 0.0, 0.8),
            make_detection(20.0, 0.0, 0.7),
        ]
        np.testing.assert_array_equal(
            detection_outcomes(detections, gt.boxes), [True, False, True]
        )
        expected = 0.5 + 0.5 * 2 / 3
        assert average_precision(detections, gt.boxes) == pytest.approx(expected)

    def test_monotone_confidence_transform(self):
        """Squaring every confidence keeps the ranking and the AP."""
        scores = np.array([0.9, 0.8, 0.7, 0.4, 0.3])
        tp = np.array([True, False, True, False, True])
        assert average_precision_from_outcomes(scores, tp, 4) == pytest.approx(
            average_precision_from_outcomes(scores**2, tp, 4)
        )

    def test_duplicate_is_false_positive(self):
        """A second box on a claimed object does not count twice."""
        detections = [make_detection(0.0, 0.0, 0.9), make_detection(0.1, 0.0, 0.8)]
        np.testing.assert_array_equal(
            detection_outcomes(detections, _gt([(0.0, 0.0)]).boxes), [True, False]
        )

    def test_length_mismatch_raises(self):
        """Scores and flags pair up."""
        with pytest.raises(MetricError):
            average_precision_from_outcomes(np.ones(2), np.ones(3, dtype=bool), 2)


class TestDisplacement:
    """Tests for ADE, FDE and miss rate."""

    def test_exact_prediction(self):
        """Predicting the truth scores zero everywhere."""
        gt = np.stack([_straight(0.0, 0.0), _straight(5.0, 3.0)])
        result = displacement_metrics(gt, gt, np.ones((2, 6), dtype=bool))
        assert (result.ade, result.fde, result.miss_rate) == (0.0, 0.0, 0.0)

    def test_lateral_offset(self):
        """A constant 1 m offset gives ADE = FDE = 1 and no misses."""
        gt = _straight(0.0, 0.0)[None]
        result = displacement_metrics(gt + [0.0, 1.0], gt, np.ones((1, 6), dtype=bool))
        assert result.ade == pytest.approx(1.0)
        assert result.fde == pytest.approx(1.0)
        assert result.miss_rate == 0.0

    def test_miss_rate(self):
        """One of two objects ending 2.5 m off is a 50% miss rate."""
        gt = np.stack([_straight(0.0, 0.0), _straight(0.0, 10.0)])
        predicted = gt.copy()
        predicted[1, -1] += [2.5, 0.0]
        result = displacement_metrics(predicted, gt, np.ones((2, 6), dtype=bool))
        assert result.miss_rate == 0.5

    def test_fde_uses_last_valid_step(self):
        """Steps past the end of the episode do not count."""
        gt = _straight(0.0, 0.0)[None]
        predicted = gt.copy()
        predicted[0, 5] += [9.0, 0.0]
        predicted[0, 4] += [1.0, 0.0]
        mask = np.array([[True] * 5 + [False]])
        ade, fde = displacement_errors(predicted, gt, mask)
        assert fde[0] == pytest.approx(1.0)
        assert ade[0] == pytest.approx(0.2)

    def test_rigid_transform_invariance(self, rng):
        """Rotating and shifting both sides leaves the metrics unchanged."""
        gt = rng.normal(size=(3, 6, 2))
        predicted = gt + rng.normal(scale=0.5, size=(3, 6, 2))
        mask = np.ones((3, 6), dtype=bool)
        c, s = np.cos(0.7), np.sin(0.7)
        rot = np.array([[c, -s], [s, c]])
        moved = displacement_metrics(predicted @ rot.T + 4.0, gt @ rot.T + 4.0, mask)
        base = displacement_metrics(predicted, gt, mask)
        assert moved.ade == pytest.approx(base.ade)
        assert moved.fde == pytest.approx(base.fde)

    def test_no_valid_steps_raises(self):
        """Objects without any future cannot be scored."""
        with pytest.raises(MetricError):
            displacement_metrics(
                np.zeros((1, 6, 2)), np.zeros((1, 6, 2)), np.zeros((1, 6), bool)
            )

    def test_shape_mismatch_raises(self):
        """Predictions and truth align step by step."""
        with pytest.raises(ShapeError):
            displacement_errors(
                np.zeros((1, 6, 2)), np.zeros((1, 5, 2)), np.ones((1, 6), bool)
            )


class TestEpa:
    """Tests for end-to-end perception and prediction accuracy."""

    def test_arithmetic(self):
        """6 hits, 2 false positives, 10 objects: (6 - 1) / 10."""
        assert epa_score(6, 2, 10, 0.5) == pytest.approx(0.5)

    def test_unclamped(self):
        """False positives alone push EPA below zero."""
        assert epa_score(0, 4, 10, 0.5) == pytest.approx(-0.2)

    def test_no_ground_truth_raises(self):
        """EPA needs at least one object."""
        with pytest.raises(MetricError):
            epa_score(0, 1, 0)

    def test_hit_threshold_is_strict(self):
        """Exactly 2 m is a miss."""
        assert count_hits(np.array([1.99, 2.0, 2.01, np.nan])) == 1

    def test_all_hits(self):
        """Every object matched with a close endpoint and no false positive gives 1."""
        gt = _gt([(0.0, 0.0), (20.0, 0.0)])
        match = match_detections(
            [make_detection(0.0, 0.0), make_detection(20.0, 0.0)], gt.boxes
        )
        assert epa(match, np.array([0.5, 1.0]), MetricsConfig()) == pytest.approx(1.0)

    def test_monotone_in_false_positives(self):
        """More false positives never raise EPA."""
        values = [epa_score(5, fp, 10) for fp in range(5)]
        assert values == sorted(values, reverse=True)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_exhaustive_scoring(self, seed):
        """Random frames score the same as a pairwise scan with scalar IoU."""
        det_boxes, det_final, gt_boxes, gt_final = _random_frame(
            np.random.default_rng(seed)
        )
        match = match_detections(det_boxes, gt_boxes)
        d, g = match.pairs[:, 0], match.pairs[:, 1]
        fde = np.linalg.norm(det_final[d] - gt_final[g], axis=-1)
        expected = _exhaustive_epa(det_boxes, det_final, gt_boxes, gt_final)
        assert epa(match, fde) == pytest.approx(expected, abs=1e-12)


class TestMetricsAccumulator:
    """Tests for reducing a run to a metrics row."""

    def frames(self):
        good = FrameResult(
            frame=4,
            ego_id=0,
            strategy=FusionStrategy.LATE,
            detections=[make_detection(0.0, 0.0, 0.9)],
            trajectories=[_trajectory(_straight(0.0, 0.0))],
            comm_log=[
                CommLogEntry(
                    frame=4, sender=1, receiver=0, strategy=FusionStrategy.LATE,
                    payload_kind="boxes", stamp=s, bits=288, delay_ms=1.0,
                    stale_frames=0, dropped=False,
                )
                for s in (3, 4)
            ],
            gt=_gt([(0.0, 0.0)], futures=_straight(0.0, 0.0)[None], object_ids=[7]),
        )
        missed = FrameResult(
            frame=5,
            ego_id=0,
            strategy=FusionStrategy.LATE,
            detections=[make_detection(30.0, 10.0, 0.5)],
            trajectories=[_trajectory(_straight(30.0, 10.0))],
            comm_log=[
                CommLogEntry(
                    frame=5, sender=1, receiver=0, strategy=FusionStrategy.LATE,
                    payload_kind="boxes", stamp=5, bits=576, delay_ms=4.0,
                    stale_frames=0, dropped=True,
                )
            ],
            gt=_gt([(0.0, 0.0)], object_ids=[9], frame=5),
        )
        return [good, missed]

    def test_row(self):
        """Hits, false positives and objects are summed over frames."""
        row = evaluate_run(self.frames(), FusionStrategy.LATE, seed=3, occluded_ids=[9])
        assert row.frames == 2
        assert row.epa == pytest.approx((1 - 0.5 * 1) / 2)
        assert row.ade == pytest.approx(0.0)
        assert row.mr == 0.0
        assert row.false_negatives == 1
        assert row.occluded_recall == 0.0
        # Ranking [TP, FP] over 2 objects
        assert row.ap50 == pytest.approx(0.5)

    def test_communication_totals(self):
        """Every transmission counts as sent; delay averages delivered messages."""
        row = evaluate_run(self.frames(), FusionStrategy.LATE, seed=3)
        assert row.bits_tx_total == 288 * 2 + 576
        assert row.bits_tx_total == sum(r.bits for r in self.frames())
        assert row.mean_delay_ms == pytest.approx(2.0)

    def test_empty_run(self):
        """Nothing evaluated leaves prediction metrics and EPA undefined."""
        row = MetricsAccumulator().row(FusionStrategy.NO_FUSION, seed=0)
        assert row.frames == 0
        assert row.ap50 == 1.0
        assert row.ade is None and row.epa is None

    def test_missing_ground_truth_raises(self):
        """Frames must carry their ground truth."""
        frame = FrameResult(4, 0, FusionStrategy.NO_FUSION, [], [])
        with pytest.raises(MetricError):
            MetricsAccumulator().add(frame)

    def test_report_csv(self, tmp_path):
        """Rows survive the CSV, undefined metrics included."""
        rows = [
            evaluate_run(self.frames(), FusionStrategy.LATE, seed=3, point="delay=0"),
            MetricsAccumulator().row(FusionStrategy.NO_FUSION, seed=1),
        ]
        path = write_metrics_csv(rows, tmp_path / "metrics.csv")
        assert read_metrics_csv(path) == rows

    def test_missing_csv_raises(self, tmp_path):
        """Reading a report that does not exist is a metric error."""
        with pytest.raises(MetricError):
            read_metrics_csv(tmp_path / "absent.csv")
