"""
Tests for fusion/ and perception/pillars.py - gradient checks on a 16 x 16 grid.

Tests cover:
- Temporal fusion over five frames with self-spatial windows
- Multi-agent fusion with self-spatial windows
- Map encoding and BEV-to-map attention
- Channel compression, detection and prediction heads
- The decoupled predictor with a live correction layer
- Pillar encoding and max pooling into BEV cells
"""

import numpy as np
import pytest

from v2xpnp_desk.fusion.agents import MultiAgentFusion
from v2xpnp_desk.fusion.compress import ChannelCompressor
from v2xpnp_desk.fusion.heads import DetectionHead, PredictionHead
from v2xpnp_desk.fusion.mapfeat import MapBevFusion, MapEncoder, MapGridFeature
from v2xpnp_desk.fusion.predictor import DecoupledPredictor
from v2xpnp_desk.fusion.temporal import TemporalFusion
from v2xpnp_desk.numcore import ops
from v2xpnp_desk.numcore.gradcheck import gradient_check
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.perception.pillars import PillarEncoder
from v2xpnp_desk.shared.types import AgentKind, PillarConfig

GRID = 16
CHANNELS = 16
FRAMES = 5
COUNT = 20


@pytest.fixture
def grid_pillars():
    """64 m square at 4 m BEV cells (16 x 16 BEV)."""
    return PillarConfig(x_range=(-32.0, 32.0), y_range=(-32.0, 32.0))


@pytest.fixture
def grid_config(small_model_config, grid_pillars):
    return small_model_config.model_copy(update={"pillars": grid_pillars})


def weighted_sum(rng, shape):
    """Scalar loss with a fixed random weight per output entry."""
    weights = rng.normal(size=shape) / shape[0]
    return lambda tensor: ops.sum(tensor * weights)


def prefixed(**modules):
    return {
        f"{prefix}.{name}": tensor
        for prefix, module in modules.items()
        for name, tensor in module.parameters().items()
    }


def assert_full_pass(report):
    assert len(report.entries) == COUNT
    assert report.passed, report.max_error


@pytest.mark.slow
class TestFullGridGradients:
    """Gradient checks at H = W = 16, C = 16, T = 5."""

    def test_temporal_fusion(self, grid_config, rng):
        """Five history frames, one missing, through temporal and window attention."""
        fusion = TemporalFusion(grid_config, rng)
        stack = rng.normal(size=(FRAMES, GRID, GRID, CHANNELS))
        valid = np.array([True, True, False, True, True])
        reduce = weighted_sum(rng, (GRID, GRID, CHANNELS))

        def loss():
            return reduce(fusion(Tensor(stack), valid))

        assert_full_pass(gradient_check(loss, fusion.parameters(), count=COUNT))

    def test_multi_agent_fusion(self, grid_config, rng):
        """Ego, helper vehicle and RSU maps with self-spatial windows on."""
        fusion = MultiAgentFusion(grid_config, rng)
        maps = [Tensor(rng.normal(size=(GRID, GRID, CHANNELS))) for _ in range(3)]
        kinds = [AgentKind.VEHICLE, AgentKind.VEHICLE, AgentKind.INFRASTRUCTURE]
        relations = np.array([[0, 0, 1], [0, 0, 1], [2, 2, 3]])
        reduce = weighted_sum(rng, (GRID, GRID, CHANNELS))

        def loss():
            return reduce(fusion(maps, kinds, relations))

        assert_full_pass(gradient_check(loss, fusion.parameters(), count=COUNT))

    def test_map_fusion(self, rng):
        """Encoder and BEV-to-map attention, some polyline slots masked."""
        k = 3
        encoder = MapEncoder(CHANNELS, 16, rng)
        fusion = MapBevFusion(CHANNELS, 2, rng)
        mask = rng.random((GRID, GRID, k)) > 0.3
        feature = MapGridFeature(
            waypoints=rng.normal(size=(GRID, GRID, k, 10, 7)),
            mask=mask,
            centers=rng.normal(size=(GRID, GRID, k, 2)),
        )
        bev = Tensor(rng.normal(size=(GRID, GRID, CHANNELS)))
        reduce = weighted_sum(rng, (GRID, GRID, CHANNELS))

        def loss():
            return reduce(fusion(bev, encoder(feature), feature))

        params = prefixed(encoder=encoder, fusion=fusion)
        assert_full_pass(gradient_check(loss, params, count=COUNT))

    def test_channel_compressor(self, rng):
        """Rate 4 squeezes 16 channels to 4 and back."""
        compressor = ChannelCompressor(CHANNELS, 4, rng)
        feature = Tensor(rng.normal(size=(GRID, GRID, CHANNELS)))
        reduce = weighted_sum(rng, (GRID, GRID, CHANNELS))

        def loss():
            out = compressor(feature)
            return reduce(out * out)

        report = gradient_check(loss, compressor.parameters(), count=COUNT)
        assert_full_pass(report)

    def test_heads(self, rng):
        """Detection and prediction heads on one shared feature map."""
        anchors = 2
        detection = DetectionHead(CHANNELS, anchors, rng)
        prediction = PredictionHead(CHANNELS, anchors, rng)
        feature = Tensor(rng.normal(size=(GRID, GRID, CHANNELS)))
        n = GRID * GRID * anchors
        w_cls, w_reg, w_pred = (
            rng.normal(size=shape) / n for shape in [(n,), (n, 8), (n, 6, 2)]
        )

        def loss():
            logits, codes = detection(feature)
            offsets = prediction(feature)
            return (
                ops.sum(ops.sigmoid(logits) * w_cls)
                + ops.sum(codes * codes * w_reg)
                + ops.sum(offsets * w_pred)
            )

        params = prefixed(detection=detection, prediction=prediction)
        assert_full_pass(gradient_check(loss, params, count=COUNT))

    def test_decoupled_predictor(self, rng):
        """Sixteen objects, five history points and three lanes each."""
        predictor = DecoupledPredictor(CHANNELS, 2, rng, map_hidden=16)
        predictor.out.weight.data[:] = rng.normal(
            0.0, 0.1, size=predictor.out.weight.shape
        )
        n = GRID
        history = rng.normal(size=(n, FRAMES, 2)).cumsum(axis=1)
        mask = rng.random((n, FRAMES)) > 0.2
        polylines = rng.normal(size=(n, 3, 10, 7))
        polyline_mask = rng.random((n, 3)) > 0.3
        reduce = weighted_sum(rng, (n, 6, 2))

        def loss():
            return reduce(predictor(history, mask, polylines, polyline_mask))

        assert_full_pass(gradient_check(loss, predictor.parameters(), count=COUNT))

    def test_pillar_encoder(self, grid_pillars, rng):
        """Six hundred points pooled into the 16 x 16 BEV grid."""
        encoder = PillarEncoder(grid_pillars, CHANNELS, rng)
        points = np.column_stack(
            [
                rng.uniform(-32.0, 32.0, size=(600, 2)),
                rng.uniform(-1.0, 2.0, 600),
                rng.uniform(0.0, 1.0, 600),
            ]
        )
        reduce = weighted_sum(rng, (GRID, GRID, CHANNELS))

        def loss():
            return reduce(encoder(points))

        assert_full_pass(gradient_check(loss, encoder.parameters(), count=COUNT))
