"""
Tests for comms/ - V2X graph, messages, channel model and logs.

Tests cover:
- Graph construction and relation labels
- Payload size accounting
- Delay, staleness, drops and pose noise
- Communication log CSV
"""

import numpy as np
import pytest

from tests.conftest import make_detection
from v2xpnp_desk.comms.channel import (
    apply_pose_noise,
    reanchor,
    stale_frames,
    transmission_delay_ms,
    transmit,
)
from v2xpnp_desk.comms.graph import build_v2x_graph
from v2xpnp_desk.comms.log import read_comm_log, write_comm_log
from v2xpnp_desk.comms.messages import (
    BoxesPayload,
    FeaturesPayload,
    Message,
    RawPointsPayload,
    payload_size,
)
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.scenario.sensor import PointCloud
from v2xpnp_desk.shared.errors import (
    ConfigurationError,
    GraphError,
    ShapeError,
    StrategyError,
)
from v2xpnp_desk.shared.types import (
    Agent,
    AgentKind,
    ChannelModel,
    FusionStrategy,
)


def _agent(agent_id, x, kind=AgentKind.VEHICLE):
    return Agent(
        agent_id=agent_id, kind=kind, poses=((x, 0.0, 0.0),), sensor_height=1.8
    )


def _features_message(stamps, sender=1, h=4, w=4, channels=16, rate=1, strategy=None):
    c = -(-channels // rate)
    payload = FeaturesPayload(
        {s: Tensor(np.zeros((h, w, c))) for s in stamps}, channels, rate
    )
    if strategy is None:
        strategy = (
            FusionStrategy.INTERMEDIATE_ONE_STEP
            if len(stamps) == 1
            else FusionStrategy.INTERMEDIATE_MULTI_STEP
        )
    return Message(sender, 0, strategy, max(stamps), payload)


class TestGraph:
    """Tests for build_v2x_graph."""

    def test_range_is_inclusive(self):
        """Agents exactly at range are connected; farther ones are not."""
        agents = [_agent(0, 0.0), _agent(1, 50.0), _agent(2, 100.5)]
        graph = build_v2x_graph(agents, 0, 50.0)
        assert graph.has_edge(0, 1) and graph.has_edge(1, 0)
        assert not graph.has_edge(0, 2)
        assert graph.neighbors(0) == [1]

    def test_relation_labels(self):
        """Edge labels follow sender and receiver kinds."""
        agents = [_agent(0, 0.0), _agent(1, 10.0, AgentKind.INFRASTRUCTURE)]
        graph = build_v2x_graph(agents, 0)
        assert graph.relation(0, 1) == "V-I"
        assert graph.relation(1, 0) == "I-V"
        assert graph.relation(1, 1) == "I-I"

    def test_relation_requires_edge(self):
        agents = [_agent(0, 0.0), _agent(1, 90.0)]
        graph = build_v2x_graph(agents, 0)
        with pytest.raises(GraphError):
            graph.relation(0, 1)

    def test_connectivity_includes_self(self):
        agents = [_agent(0, 0.0), _agent(1, 90.0)]
        conn = build_v2x_graph(agents, 0).connectivity([0, 1])
        assert conn.tolist() == [[True, False], [False, True]]


class TestPayloadSize:
    """Bit accounting."""

    def test_features_example(self):
        """50 x 50 map, C=64 at r=32: 2 channels -> 160000 bits."""
        message = _features_message([3], h=50, w=50, channels=64, rate=32)
        assert payload_size(message) == 160000

    def test_compression_rounds_up(self):
        """r larger than C still sends one channel."""
        message = _features_message([3], h=10, w=10, channels=64, rate=128)
        assert payload_size(message) == 10 * 10 * 1 * 32

    def test_boxes_example(self):
        """10 boxes are 2880 bits."""
        dets = [make_detection(float(i), 0.0) for i in range(10)]
        message = Message(1, 0, FusionStrategy.LATE, 0, BoxesPayload({0: dets}))
        assert payload_size(message) == 2880

    def test_multi_step_scales_with_stamps(self):
        """Five stamps are five times one."""
        one = payload_size(_features_message([4]))
        five = payload_size(_features_message([0, 1, 2, 3, 4]))
        assert five == 5 * one

    def test_points(self):
        cloud = PointCloud(
            agent_id=1, frame=0, pose=(0.0, 0.0, 0.0), points=np.zeros((7, 4))
        )
        message = Message(1, 0, FusionStrategy.EARLY, 0, RawPointsPayload({0: cloud}))
        assert payload_size(message) == 7 * 4 * 32

    def test_feature_shape_checked(self):
        """Channel count must be ceil(C / r)."""
        with pytest.raises(ShapeError):
            FeaturesPayload({0: Tensor(np.zeros((4, 4, 3)))}, channels=16, rate=2)

    def test_payload_must_match_strategy(self):
        """Late fusion cannot carry feature maps."""
        payload = FeaturesPayload({0: Tensor(np.zeros((2, 2, 16)))}, 16, 1)
        with pytest.raises(StrategyError):
            Message(1, 0, FusionStrategy.LATE, 0, payload)

    def test_one_step_single_stamp(self):
        with pytest.raises(StrategyError):
            _features_message([0, 1], strategy=FusionStrategy.INTERMEDIATE_ONE_STEP)

    def test_empty_boxes_rejected(self):
        """A message without boxes would be a zero-bit transmission."""
        with pytest.raises(StrategyError, match="no data"):
            Message(1, 0, FusionStrategy.LATE, 0, BoxesPayload({0: []}))

    def test_nonempty_drops_empty_stamps(self):
        """Only stamps with content survive; nothing left gives None."""
        dets = [make_detection(1.0, 0.0)]
        payload = BoxesPayload({0: [], 1: dets}).nonempty()
        assert payload is not None and payload.stamps() == [1]
        message = Message(1, 0, FusionStrategy.LATE, 1, payload)
        assert payload_size(message) == 288
        assert BoxesPayload({0: [], 1: []}).nonempty() is None


class TestChannel:
    """Delay, staleness, drops and pose noise."""

    def test_delay_examples(self):
        """0.269 Mbit takes 10 ms at 26.9 Mbps and 20 ms at 13.45 Mbps."""
        assert transmission_delay_ms(269000, ChannelModel(rate_mbps=26.9)) == 10.0
        assert transmission_delay_ms(269000, ChannelModel(rate_mbps=13.45)) == 20.0

    def test_extra_latency_added(self):
        channel = ChannelModel(rate_mbps=26.9, extra_latency_ms=100.0)
        assert transmission_delay_ms(269000, channel) == 110.0

    def test_staleness_rounding(self):
        """100 ms at 2 Hz is fresh; 250 ms rounds to one frame."""
        assert stale_frames(100.0, 0.5) == 0
        assert stale_frames(250.0, 0.5) == 1
        assert stale_frames(600.0, 0.5) == 1
        assert stale_frames(800.0, 0.5) == 2

    def test_no_drop(self):
        """p=0 delivers every message whole."""
        result = transmit(
            [_features_message([2]), _features_message([0, 1, 2], sender=2)],
            ChannelModel(),
            np.random.default_rng(0),
            0.5,
        )
        assert len(result.delivered) == 2
        assert result.delivered[1].message.stamps == [0, 1, 2]

    def test_full_drop(self):
        """p=1 delivers nothing but still logs the attempts."""
        result = transmit(
            [_features_message([2])],
            ChannelModel(drop_probability=1.0),
            np.random.default_rng(0),
            0.5,
        )
        assert result.delivered == []
        assert len(result.log) == 1 and result.log[0].dropped

    def test_drops_are_monotone_in_probability(self):
        """With one seed, a higher drop rate loses a superset of stamps."""
        messages = [_features_message(list(range(5)), sender=s) for s in range(1, 9)]
        lost = []
        for p in (0.2, 0.5, 0.8):
            channel = ChannelModel(drop_probability=p)
            result = transmit(messages, channel, np.random.default_rng(9), 0.5)
            lost.append({(e.sender, e.stamp) for e in result.log if e.dropped})
        assert lost[0] <= lost[1] <= lost[2]

    def test_graph_absent_stamps_not_sent(self):
        """A neighbour out of range at a past frame contributes no stamp."""
        near = build_v2x_graph([_agent(0, 0.0), _agent(1, 10.0)], 0)
        far = build_v2x_graph([_agent(0, 0.0), _agent(1, 80.0)], 0)
        graphs = {0: far, 1: near, 2: near}
        result = transmit(
            [_features_message([0, 1, 2])],
            ChannelModel(),
            np.random.default_rng(0),
            0.5,
            graphs,
        )
        assert result.delivered[0].message.stamps == [1, 2]
        assert [e.stamp for e in result.log] == [1, 2]

    def test_log_bits_match_payload_sizes(self):
        """Logged bits equal the payload sizes of the sent messages."""
        messages = [
            _features_message([0, 1, 2, 3, 4]),
            _features_message([4], sender=2),
        ]
        result = transmit(
            messages, ChannelModel(drop_probability=0.3), np.random.default_rng(1), 0.5
        )
        assert result.bits == sum(payload_size(m) for m in messages)

    def test_multi_step_delay_accumulates(self):
        """Five stamps take five times the airtime of one."""
        channel = ChannelModel(rate_mbps=1.0)
        one = transmit([_features_message([4])], channel, np.random.default_rng(0), 0.5)
        five = transmit(
            [_features_message([0, 1, 2, 3, 4])], channel, np.random.default_rng(0), 0.5
        )
        single = one.delivered[0].delay_ms
        assert five.delivered[0].delay_ms == pytest.approx(5 * single)

    def test_zero_pose_noise_is_identity(self):
        pose = (12.5, -3.25, 0.7)
        assert apply_pose_noise(pose, 0.0, 0.0, np.random.default_rng(0)) == pose

    def test_negative_pose_noise(self):
        with pytest.raises(ConfigurationError):
            apply_pose_noise((0.0, 0.0, 0.0), -0.1, 0.0, np.random.default_rng(0))

    def test_pose_noise_statistics(self):
        """Translation noise has the requested spread."""
        rng = np.random.default_rng(4)
        xs = [apply_pose_noise((0.0, 0.0, 0.0), 0.2, 0.0, rng)[0] for _ in range(4000)]
        assert np.std(xs) == pytest.approx(0.2, rel=0.1)

    def test_reanchor_is_rigid(self):
        """Re-anchoring preserves pairwise distances."""
        points = np.array([[1.0, 2.0], [5.0, -1.0], [0.0, 0.0]])
        moved = reanchor(points, (1.0, 1.0, 0.2), (1.3, 0.8, 0.25))
        d_before = np.linalg.norm(points[0] - points[1])
        d_after = np.linalg.norm(moved[0] - moved[1])
        assert d_after == pytest.approx(d_before)


class TestCommLog:
    def test_csv_round_trip(self, tmp_path):
        result = transmit(
            [_features_message([0, 1])],
            ChannelModel(drop_probability=0.5),
            np.random.default_rng(2),
            0.5,
        )
        path = write_comm_log(result.log, tmp_path / "comm.csv")
        assert read_comm_log(path) == result.log
