"""
Training loop: one scenario frame per step, Adam on the trainable groups of
the current stage, early stopping on held-out scenarios.
"""

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from v2xpnp_desk.fusion.heads import HeadOutputs
from v2xpnp_desk.fusion.mapfeat import gather_polylines
from v2xpnp_desk.fusion.model import V2XPnPModel
from v2xpnp_desk.numcore.optim import AdamState, adam_step
from v2xpnp_desk.numcore.tensor import ComputationRecord, Tensor, backward
from v2xpnp_desk.perception.anchors import AnchorTargets, assign_anchors, future_offsets
from v2xpnp_desk.scenario.truth import ground_truth
from v2xpnp_desk.shared.constants import HISTORY_FRAMES
from v2xpnp_desk.shared.errors import DivergenceError, NonFiniteError, TrainingError
from v2xpnp_desk.shared.types import FusionStrategy, PipelineConfig, Scenario
from v2xpnp_desk.shared.utils import world_to_local
from v2xpnp_desk.strategies.pipeline import PipelineRun, default_eval_frames
from v2xpnp_desk.trainer.io import EpochRecord, write_training_log
from v2xpnp_desk.trainer.losses import (
    LossTerms,
    cumulative_positions,
    detection_losses,
    prediction_loss,
)
from v2xpnp_desk.trainer.schedule import StageConfig, TrainSchedule

logger = logging.getLogger(__name__)

PREDICTOR_STAGE = "predictor"


@dataclass(frozen=True)
class Sample:
    scenario: Scenario
    ego_id: int
    frame: int

    @property
    def label(self) -> str:
        return f"scenario {self.scenario.seed} ego {self.ego_id} frame {self.frame}"


@dataclass
class TrainResult:
    records: list[EpochRecord] = field(default_factory=list)
    stopped_early: list[str] = field(default_factory=list)


def build_samples(
    scenarios: Iterable[Scenario],
    ego_id: int = 0,
    frames: Sequence[int] | None = None,
) -> list[Sample]:
    """Every (scenario, frame) pair; frames default to the evaluation frames."""
    return [
        Sample(s, ego_id, f)
        for s in scenarios
        for f in (frames if frames is not None else default_eval_frames(s.num_frames))
    ]


def track_history(
    scenario: Scenario,
    ego_id: int,
    frame: int,
    object_ids: Sequence[int],
    history: int = HISTORY_FRAMES,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Ground-truth past centers (N, history, 2) in the ego frame at `frame`,
    oldest first, with a validity mask.
    """
    pose = scenario.agent(ego_id).pose(frame)
    positions = np.zeros((len(object_ids), history, 2))
    mask = np.zeros((len(object_ids), history), dtype=bool)
    for i, object_id in enumerate(object_ids):
        track = scenario.object(int(object_id))
        for k, f in enumerate(range(frame - history + 1, frame + 1)):
            if f >= 0 and track.valid[f]:
                center = np.array([track.boxes[f][:2]])
                positions[i, k] = world_to_local(center, pose)[0]
                mask[i, k] = True
    return positions, mask


def _mean_terms(terms: Sequence[tuple[float, float, float, float]]) -> np.ndarray:
    return np.mean(np.array(terms, dtype=np.float64).reshape(-1, 4), axis=0)


class Trainer:
    """
    Runs a TrainSchedule on a model.

    Sensor clouds, map grids and anchor targets are cached per scenario
    frame across epochs; only the forward pass is recomputed.
    """

    def __init__(
        self,
        model: V2XPnPModel,
        schedule: TrainSchedule,
        rng: np.random.Generator,
    ) -> None:
        self.model = model
        self.schedule = schedule
        self.rng = rng
        self._runs: dict[tuple[int, FusionStrategy], PipelineRun] = {}
        self._targets: dict[tuple[int, int, int], AnchorTargets] = {}

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def pipeline(self, sample: Sample, strategy: FusionStrategy) -> PipelineRun:
        key = (id(sample.scenario), strategy)
        if key not in self._runs:
            config = PipelineConfig(
                strategy=strategy, compression_rate=self.model.config.compression_rate
            )
            self._runs[key] = PipelineRun(
                sample.scenario, sample.ego_id, config, self.model, self.rng
            )
        return self._runs[key]

    def targets(self, sample: Sample) -> AnchorTargets:
        key = (id(sample.scenario), sample.ego_id, sample.frame)
        if key not in self._targets:
            gt = ground_truth(sample.scenario, sample.ego_id, sample.frame)
            self._targets[key] = assign_anchors(
                self.model.anchors, gt.boxes, gt.futures, gt.future_mask
            )
        return self._targets[key]

    def outputs(self, sample: Sample, stage: StageConfig) -> HeadOutputs:
        if stage.multi_agent:
            strategy = FusionStrategy(self.schedule.cooperative_strategy)
            run = self.pipeline(sample, strategy)
            if strategy is FusionStrategy.INTERMEDIATE_MULTI_STEP:
                return run.multi_step_outputs(sample.frame)[0]
            return run.one_step_outputs(sample.frame)[0]
        run = self.pipeline(sample, FusionStrategy.NO_FUSION)
        clouds = (
            run.local_history(sample.ego_id, sample.frame)
            if stage.history
            else [run.cloud(sample.ego_id, sample.frame).points]
        )
        grid = run.map_grid(sample.ego_id, sample.frame)
        return self.model.single_agent(clouds, grid, run.ego.kind)

    def losses(self, sample: Sample, stage: StageConfig, w_pred: float) -> LossTerms:
        out = self.outputs(sample, stage)
        return detection_losses(
            out.cls_logits,
            out.box_codes,
            out.offsets,
            self.targets(sample),
            self.schedule.weights,
            w_pred,
        )

    # ------------------------------------------------------------------
    # Optimization
    # ------------------------------------------------------------------

    def step(
        self,
        sample: Sample,
        stage: StageConfig,
        epoch: int,
        params: Mapping[str, Tensor],
        adam: AdamState,
        w_pred: float,
    ) -> LossTerms:
        """
        One forward, backward and Adam update.

        Raises:
            DivergenceError: If a value or gradient becomes non-finite.
        """
        try:
            with ComputationRecord() as record:
                terms = self.losses(sample, stage, w_pred)
            grads = backward(record, terms.total)
        except NonFiniteError as e:
            raise DivergenceError(stage.name, epoch, sample.label, str(e)) from e
        named = {name: grads[t] for name, t in params.items() if t in grads}
        for name, grad in named.items():
            if not np.isfinite(grad).all():
                raise DivergenceError(
                    stage.name, epoch, sample.label, f"non-finite gradient for {name}"
                )
        adam_step(adam, params, named)
        self.model.zero_grad()
        logger.debug(f"{stage.name}/{epoch} {sample.label}: {terms.values()}")
        return terms

    def evaluate(
        self, samples: Sequence[Sample], stage: StageConfig, w_pred: float
    ) -> float:
        """Mean total loss over samples without recording."""
        try:
            totals = [self.losses(s, stage, w_pred).total.item() for s in samples]
        except NonFiniteError as e:
            raise DivergenceError(stage.name, -1, "holdout", str(e)) from e
        return float(np.mean(totals))

    def params_for(self, stage: StageConfig) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for group in stage.groups:
            params.update(self.model.param_group(group))
        return params

    def run_stage(
        self,
        stage: StageConfig,
        samples: Sequence[Sample],
        holdout: Sequence[Sample] = (),
    ) -> tuple[list[EpochRecord], bool]:
        """
        Train one stage; returns its epoch records and whether it stopped early.

        With held-out samples and a patience, the stage stops once the
        held-out loss has not improved for `patience` epochs, and the best
        parameters are restored.
        """
        params = self.params_for(stage)
        adam = AdamState(lr=self.schedule.lr, weight_decay=self.schedule.weight_decay)
        patience = self.schedule.patience if holdout else None
        best = np.inf
        best_state: dict[str, np.ndarray] | None = None
        waited = 0
        records: list[EpochRecord] = []
        logger.info(
            f"Stage {stage.name}: {stage.epochs} epochs, {len(samples)} samples, "
            f"{sum(t.size for t in params.values())} trainable parameters"
        )
        for epoch in range(stage.epochs):
            w_pred = stage.w_pred(epoch)
            order = self.rng.permutation(len(samples))
            terms = [
                self.step(samples[i], stage, epoch, params, adam, w_pred).values()
                for i in order
            ]
            l_cla, l_reg, l_pred, total = _mean_terms(terms)
            held = self.evaluate(holdout, stage, stage.w_pred_end) if holdout else None
            records.append(
                EpochRecord(
                    str(stage.name),
                    epoch,
                    float(l_cla),
                    float(l_reg),
                    float(l_pred),
                    float(total),
                    adam.lr,
                    w_pred,
                    held,
                )
            )
            logger.info(
                f"Stage {stage.name} epoch {epoch}: cls {l_cla:.4f} reg {l_reg:.4f} "
                f"pred {l_pred:.4f} total {total:.4f} w_pred {w_pred:.2f}"
                + ("" if held is None else f" holdout {held:.4f}")
            )
            if held is None or patience is None:
                continue
            if held < best:
                best, waited = held, 0
                best_state = self.model.state_dict()
            else:
                waited += 1
                if waited >= patience:
                    logger.info(f"Stage {stage.name}: early stop after epoch {epoch}")
                    if best_state is not None:
                        self.model.load_state_dict(best_state)
                    return records, True
        if best_state is not None:
            self.model.load_state_dict(best_state)
        return records, False

    # ------------------------------------------------------------------
    # Late-fusion predictor
    # ------------------------------------------------------------------

    def predictor_loss(self, sample: Sample) -> Tensor | None:
        """Prediction loss on ground-truth tracks; None when no future is known."""
        gt = ground_truth(sample.scenario, sample.ego_id, sample.frame)
        if len(gt) == 0 or not gt.future_mask.any():
            return None
        sites = gt.boxes[:, :2]
        history, mask = track_history(
            sample.scenario, sample.ego_id, sample.frame, gt.object_ids.tolist()
        )
        pose = sample.scenario.agent(sample.ego_id).pose(sample.frame)
        inputs, polyline_mask, _ = gather_polylines(
            sample.scenario.vector_map, pose, sites, self.model.config.map_polylines
        )
        offsets, target_mask = future_offsets(sites, gt.futures, gt.future_mask)
        if not target_mask.any():
            return None
        pred = self.model.predictor(history, mask, inputs, polyline_mask)
        return prediction_loss(
            cumulative_positions(pred), np.cumsum(offsets, axis=1), target_mask
        )

    def train_predictor(self, samples: Sequence[Sample]) -> list[EpochRecord]:
        """Fit the decoupled predictor on ground-truth tracks."""
        params = self.model.param_group("predictor")
        adam = AdamState(lr=self.schedule.lr, weight_decay=self.schedule.weight_decay)
        records = []
        for epoch in range(self.schedule.predictor_epochs):
            losses = []
            for i in self.rng.permutation(len(samples)):
                sample = samples[i]
                try:
                    with ComputationRecord() as record:
                        loss = self.predictor_loss(sample)
                    if loss is None:
                        continue
                    grads = backward(record, loss)
                except NonFiniteError as e:
                    raise DivergenceError(
                        PREDICTOR_STAGE, epoch, sample.label, str(e)
                    ) from e
                named = {n: grads[t] for n, t in params.items() if t in grads}
                adam_step(adam, params, named)
                self.model.zero_grad()
                losses.append(loss.item())
            if not losses:
                logger.warning("Predictor training skipped: no known futures")
                break
            mean = float(np.mean(losses))
            records.append(
                EpochRecord(
                    PREDICTOR_STAGE, epoch, 0.0, 0.0, mean, mean, adam.lr, 1.0
                )
            )
            logger.info(f"Predictor epoch {epoch}: pred {mean:.4f}")
        return records


def train(
    model: V2XPnPModel,
    scenarios: Sequence[Scenario],
    schedule: TrainSchedule | None = None,
    rng: np.random.Generator | None = None,
    holdout: Sequence[Scenario] = (),
    log_path: str | Path | None = None,
    ego_id: int = 0,
) -> TrainResult:
    """
    Train a model through every stage of the schedule, then its predictor.

    Deterministic for a given model seed and generator.

    Args:
        model (V2XPnPModel): Trained in place.
        scenarios (Sequence[Scenario]): Training suite.
        schedule (TrainSchedule): Stages and optimizer settings.
        rng (np.random.Generator): Sample order and channel randomness.
        holdout (Sequence[Scenario]): Scenarios for early stopping.
        log_path: Where to write the training log CSV.

    Raises:
        TrainingError: If the suite is empty.
        DivergenceError: If the loss becomes non-finite.
    """
    if not scenarios:
        raise TrainingError("training needs at least one scenario")
    schedule = schedule or TrainSchedule()
    trainer = Trainer(model, schedule, rng or np.random.default_rng(0))
    samples = build_samples(scenarios, ego_id)
    if not samples:
        raise TrainingError("scenarios are too short to provide a training frame")
    held = build_samples(holdout, ego_id)

    result = TrainResult()
    for stage in schedule.stages:
        records, stopped = trainer.run_stage(stage, samples, held)
        result.records.extend(records)
        if stopped:
            result.stopped_early.append(str(stage.name))
    result.records.extend(trainer.train_predictor(samples))

    if log_path is not None:
        write_training_log(result.records, log_path)
    return result
