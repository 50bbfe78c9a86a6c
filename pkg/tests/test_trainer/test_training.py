"""
Tests for trainer/ - schedule, training loop and training log.

Tests cover:
- Stage ordering, known groups and the prediction-weight ramp
- Frozen groups stay bit-identical through a stage
- Determinism for a fixed seed
- Divergence aborts with a diagnostic
- Early stopping restores the best parameters
- Predictor training on ground-truth tracks
- Training log CSV
"""

import numpy as np
import pytest
from pydantic import ValidationError

from v2xpnp_desk.fusion.model import V2XPnPModel
from v2xpnp_desk.scenario.generator import generate_scenario
from v2xpnp_desk.scenario.truth import ground_truth
from v2xpnp_desk.shared.errors import DivergenceError, TrainingError
from v2xpnp_desk.shared.types import ScenarioConfig
from v2xpnp_desk.trainer import (
    TRAINING_LOG_FIELDS,
    EpochRecord,
    StageConfig,
    StageName,
    Trainer,
    TrainSchedule,
    build_samples,
    read_training_log,
    train,
    write_training_log,
)
from v2xpnp_desk.trainer.loop import track_history
from v2xpnp_desk.trainer.schedule import default_stages

TRAIN_FRAME = 4


@pytest.fixture
def short_scenario():
    """Eleven frames: exactly one frame with full history and future."""
    return generate_scenario(ScenarioConfig(num_frames=11), seed=3)


@pytest.fixture
def model(small_model_config):
    return V2XPnPModel(small_model_config)


def one_stage(name, groups, epochs=1, **kwargs):
    return TrainSchedule(
        stages=[StageConfig(name=name, epochs=epochs, groups=groups, **kwargs)],
        predictor_epochs=0,
    )


def group_state(model, group):
    return {n: t.numpy() for n, t in model.param_group(group).items()}


class TestSchedule:
    """Tests for stage configuration."""

    def test_default_stages_in_order(self):
        """Stages 1a, 1b, 1c and 2."""
        names = [s.name for s in TrainSchedule().stages]
        assert names == list(StageName)

    def test_backbone_frozen_in_temporal_stage(self):
        """Stage 1b does not train the backbone."""
        stage = default_stages()[1]
        assert "backbone" not in stage.groups
        assert "temporal" in stage.groups

    def test_out_of_order_rejected(self):
        """Stage 2 cannot precede stage 1a."""
        stages = default_stages()
        with pytest.raises(ValidationError):
            TrainSchedule(stages=[stages[3], stages[0]])

    def test_unknown_group_rejected(self):
        """Groups name real parameter groups."""
        with pytest.raises(ValidationError):
            StageConfig(name=StageName.JOINT, groups=("decoder",))

    def test_w_pred_ramp(self):
        """Linear from 0 to 2 over five epochs."""
        stage = StageConfig(
            name=StageName.COOPERATIVE,
            epochs=5,
            groups=("agent",),
            w_pred_start=0.0,
            w_pred_end=2.0,
        )
        assert [stage.w_pred(e) for e in range(5)] == [0.0, 0.5, 1.0, 1.5, 2.0]

    def test_single_epoch_uses_end_weight(self):
        """A one-epoch ramp sits at its end value."""
        stage = StageConfig(
            name=StageName.COOPERATIVE, epochs=1, groups=("agent",), w_pred_start=0.0
        )
        assert stage.w_pred(0) == 2.0

    def test_with_epochs(self):
        """Every stage and the predictor get the requested epochs."""
        schedule = TrainSchedule.with_epochs(3, lr=1e-3)
        assert {s.epochs for s in schedule.stages} == {3}
        assert schedule.predictor_epochs == 3
        assert schedule.lr == 1e-3


class TestTrainer:
    """Tests for the training loop."""

    def test_frozen_backbone_is_bit_identical(self, model, short_scenario):
        """Stage 1b leaves the backbone untouched and moves temporal fusion."""
        schedule = one_stage(StageName.TEMPORAL, ("temporal", "prediction_head"))
        backbone = group_state(model, "backbone")
        temporal = group_state(model, "temporal")
        trainer = Trainer(model, schedule, np.random.default_rng(0))
        trainer.run_stage(schedule.stages[0], build_samples([short_scenario]))
        for name, value in group_state(model, "backbone").items():
            np.testing.assert_array_equal(value, backbone[name])
        assert any(
            not np.array_equal(value, temporal[name])
            for name, value in group_state(model, "temporal").items()
        )

    def test_deterministic(self, small_model_config, short_scenario):
        """Same seeds, same parameters."""
        schedule = one_stage(
            StageName.SINGLE_FRAME,
            ("backbone", "detection_head"),
            epochs=2,
            history=False,
        )
        states = []
        for _ in range(2):
            model = V2XPnPModel(small_model_config)
            trainer = Trainer(model, schedule, np.random.default_rng(5))
            trainer.run_stage(schedule.stages[0], build_samples([short_scenario]))
            states.append(model.state_dict())
        for name, value in states[0].items():
            np.testing.assert_array_equal(value, states[1][name])

    def test_cooperative_stage_trains_agent_fusion(self, model, short_scenario):
        """Stage 2 runs on fused neighbor features and updates fusion weights."""
        schedule = one_stage(StageName.COOPERATIVE, ("agent",), multi_agent=True)
        before = group_state(model, "agent")
        trainer = Trainer(model, schedule, np.random.default_rng(0))
        records, stopped = trainer.run_stage(
            schedule.stages[0], build_samples([short_scenario])
        )
        assert not stopped
        assert len(records) == 1
        assert any(
            not np.array_equal(value, before[name])
            for name, value in group_state(model, "agent").items()
        )

    def test_divergence_raises_with_diagnostic(self, model, short_scenario):
        """A NaN parameter aborts naming the stage and sample."""
        _, tensor = next(iter(model.param_group("backbone").items()))
        tensor.data[...] = np.nan
        schedule = one_stage(StageName.SINGLE_FRAME, ("backbone",), history=False)
        trainer = Trainer(model, schedule, np.random.default_rng(0))
        with pytest.raises(DivergenceError, match="stage 1a") as info:
            trainer.run_stage(schedule.stages[0], build_samples([short_scenario]))
        assert info.value.epoch == 0
        assert "frame 4" in info.value.sample

    def test_early_stopping_restores_best(self, model, short_scenario):
        """Held-out loss rising after epoch 0 stops the stage and rolls back."""
        schedule = one_stage(
            StageName.SINGLE_FRAME, ("detection_head",), epochs=5, history=False
        )
        schedule = schedule.model_copy(update={"patience": 1})
        trainer = Trainer(model, schedule, np.random.default_rng(0))
        held = iter([1.0, 2.0, 3.0])
        snapshots = []
        original_step = trainer.step

        def step(*args, **kwargs):
            terms = original_step(*args, **kwargs)
            snapshots.append(group_state(model, "detection_head"))
            return terms

        trainer.step = step
        trainer.evaluate = lambda *args: next(held)
        samples = build_samples([short_scenario])
        records, stopped = trainer.run_stage(schedule.stages[0], samples, samples)
        assert stopped
        assert [r.holdout for r in records] == [1.0, 2.0]
        for name, value in group_state(model, "detection_head").items():
            np.testing.assert_array_equal(value, snapshots[0][name])

    def test_empty_suite_raises(self, model):
        """Training needs scenarios."""
        with pytest.raises(TrainingError):
            train(model, [])

    def test_track_history_matches_ground_truth(self, short_scenario):
        """The newest history point of every object is its current center."""
        gt = ground_truth(short_scenario, 0, TRAIN_FRAME)
        history, mask = track_history(
            short_scenario, 0, TRAIN_FRAME, gt.object_ids.tolist()
        )
        assert mask[:, -1].all()
        np.testing.assert_allclose(history[:, -1], gt.boxes[:, :2], atol=1e-9)

    def test_predictor_training_lowers_loss(self, model, short_scenario):
        """Fitting the predictor on one frame reduces its error."""
        schedule = TrainSchedule(stages=[], predictor_epochs=15, lr=1e-2)
        trainer = Trainer(model, schedule, np.random.default_rng(0))
        records = trainer.train_predictor(build_samples([short_scenario]))
        assert len(records) == 15
        assert {r.stage for r in records} == {"predictor"}
        assert records[-1].l_pred < records[0].l_pred


class TestTrainingLog:
    """Tests for the training log CSV."""

    def test_train_writes_log(self, model, short_scenario, tmp_path):
        """One row per stage epoch, with the ramped weight as configured."""
        schedule = TrainSchedule(
            stages=[
                StageConfig(
                    name=StageName.COOPERATIVE,
                    epochs=3,
                    groups=("detection_head",),
                    multi_agent=True,
                    w_pred_start=0.0,
                    w_pred_end=2.0,
                )
            ],
            predictor_epochs=0,
        )
        path = tmp_path / "training_log.csv"
        result = train(
            model, [short_scenario], schedule, np.random.default_rng(0), log_path=path
        )
        assert path.read_text().splitlines()[0] == ",".join(TRAINING_LOG_FIELDS)
        rows = read_training_log(path)
        assert [r.w_pred for r in rows] == [0.0, 1.0, 2.0]
        assert [r.stage for r in rows] == ["2"] * 3
        assert len(result.records) == 3

    def test_totals_are_weighted_sums(self, model, short_scenario):
        """Logged totals combine logged terms with the schedule's weights."""
        schedule = one_stage(StageName.JOINT, ("detection_head", "prediction_head"))
        result = train(model, [short_scenario], schedule, np.random.default_rng(1))
        (record,) = result.records
        expected = record.l_cla + 2.0 * record.l_reg + 2.0 * record.l_pred
        assert record.total == pytest.approx(expected, rel=1e-5)

    def test_round_trip(self, tmp_path):
        """Records read back with their values."""
        record = EpochRecord("1a", 0, 0.5, 0.25, 0.0, 1.0, 0.002, 0.0)
        (back,) = read_training_log(write_training_log([record], tmp_path / "log.csv"))
        assert back == record

    def test_missing_file_raises(self, tmp_path):
        """Reading an absent log is a training error."""
        with pytest.raises(TrainingError):
            read_training_log(tmp_path / "absent.csv")


@pytest.mark.slow
class TestConvergence:
    """Long-running training checks."""

    def test_stage_1a_halves_loss(self, small_model_config, short_scenario):
        """Fifty single-frame epochs on one scenario halve the total loss."""
        model = V2XPnPModel(small_model_config)
        stage = default_stages(50)[0]
        schedule = TrainSchedule(stages=[stage], predictor_epochs=0, patience=None)
        result = train(model, [short_scenario], schedule, np.random.default_rng(0))
        assert result.records[-1].total <= 0.5 * result.records[0].total
