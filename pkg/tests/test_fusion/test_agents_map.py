"""
Tests for fusion/agents.py and fusion/mapfeat.py - heterogeneous agent
attention and map fusion.

Tests cover:
- Ego-only attention reduces to the value path
- Invariance to the order of same-type neighbors
- Agent type and relation labels change the result
- Unconnected agents have no influence
- Nearest-polyline gathering, attributes and pooling
- Masked map tokens have no influence on the BEV token
"""

import numpy as np
import pytest

from v2xpnp_desk.fusion.agents import MultiAgentFusion, RelationAttention
from v2xpnp_desk.fusion.mapfeat import (
    MapBevFusion,
    MapEncoder,
    MapGridFeature,
    build_map_grid,
    gather_polylines,
    polyline_attributes,
    pool_waypoints,
)
from v2xpnp_desk.numcore.attention import capture_attention
from v2xpnp_desk.numcore.gradcheck import gradient_check
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ShapeError
from v2xpnp_desk.shared.types import AgentKind, Polyline, VectorMap

V = AgentKind.VEHICLE
I = AgentKind.INFRASTRUCTURE  # noqa: E741


def straight_lane(y: float, lane_type: int = 0) -> Polyline:
    """Ten waypoints along x from -9 to 9 at height y."""
    return Polyline(
        points=tuple((float(x), y) for x in np.arange(-9.0, 10.0, 2.0)),
        lane_type=lane_type,
    )


class TestRelationAttention:
    """Tests for the relation-aware attention layer."""

    def test_ego_alone_is_value_projection(self, rng):
        """A single agent attends to itself with weight one."""
        layer = RelationAttention(16, 4, rng, residual=False)
        layer.wv.set_identity()
        layer.wo.set_identity()
        x = rng.normal(size=(4, 4, 1, 16))
        out = layer(Tensor(x), np.array([[0]]))
        np.testing.assert_allclose(out.data, x, atol=1e-5)

    def test_relation_bias_only_on_labelled_pairs(self, rng):
        """Pairs without a relation label get no bias."""
        layer = RelationAttention(8, 2, rng)
        x = Tensor(rng.normal(size=(2, 8)))
        relations = np.array([[0, -1], [-1, 3]])
        bias = layer.relation_bias(layer.wq(x), layer.wk(x), relations).data
        assert bias.shape == (2, 2, 2)
        np.testing.assert_array_equal(bias[:, 0, 1], [0.0, 0.0])
        np.testing.assert_array_equal(bias[:, 1, 0], [0.0, 0.0])
        assert np.abs(bias[:, 0, 0]).sum() > 0

    def test_heads_must_divide_channels(self, rng):
        """Channel width is split evenly over heads."""
        with pytest.raises(ShapeError):
            RelationAttention(10, 4, rng)


class TestMultiAgentFusion:
    """Tests for ego-centric fusion of agent maps."""

    def maps(self, rng, count):
        return [Tensor(rng.normal(size=(4, 8, 16))) for _ in range(count)]

    def test_neighbor_order_does_not_matter(self, small_model_config, rng):
        """Swapping two same-type neighbors leaves the ego output unchanged."""
        fusion = MultiAgentFusion(small_model_config, rng)
        ego, a, b = self.maps(rng, 3)
        relations = np.zeros((3, 3), dtype=np.int64)
        first = fusion([ego, a, b], [V, V, V], relations).data
        second = fusion([ego, b, a], [V, V, V], relations).data
        np.testing.assert_allclose(first, second, atol=1e-5)

    def test_agent_type_changes_output(self, small_model_config, rng):
        """Relabelling a neighbor as infrastructure changes the fused map."""
        fusion = MultiAgentFusion(small_model_config, rng)
        ego, other = self.maps(rng, 2)
        as_vehicle = fusion([ego, other], [V, V], np.array([[0, 0], [0, 0]])).data
        as_rsu = fusion([ego, other], [V, I], np.array([[0, 1], [2, 3]])).data
        assert not np.allclose(as_vehicle, as_rsu, atol=1e-4)

    def test_unconnected_neighbor_is_ignored(self, small_model_config, rng):
        """An agent outside the ego's neighborhood does not change the result."""
        fusion = MultiAgentFusion(small_model_config, rng)
        ego, other = self.maps(rng, 2)
        alone = fusion([ego], [V], np.array([[0]])).data
        cut = fusion([ego, other], [V, V], np.array([[0, -1], [-1, 0]])).data
        np.testing.assert_allclose(cut, alone, atol=1e-5)

    def test_output_is_ego_map_shape(self, small_model_config, rng):
        """The fused result has the ego map's shape."""
        fusion = MultiAgentFusion(small_model_config, rng)
        maps = self.maps(rng, 3)
        out = fusion(maps, [V, V, I], np.array([[0, 0, 1], [0, 0, 1], [2, 2, 3]]))
        assert out.shape == (4, 8, 16)

    def test_empty_input_raises(self, small_model_config, rng):
        """The ego map is required."""
        fusion = MultiAgentFusion(small_model_config, rng)
        with pytest.raises(ShapeError):
            fusion([], [], np.zeros((0, 0)))

    def test_kind_count_mismatch_raises(self, small_model_config, rng):
        """One kind per map."""
        fusion = MultiAgentFusion(small_model_config, rng)
        with pytest.raises(ShapeError):
            fusion(self.maps(rng, 2), [V], np.zeros((2, 2)))

    def test_missing_self_edge_raises(self, small_model_config, rng):
        """Every agent must attend to itself."""
        fusion = MultiAgentFusion(small_model_config, rng)
        with pytest.raises(ShapeError):
            fusion(self.maps(rng, 2), [V, V], np.array([[0, 0], [0, -1]]))

    def test_gradient_check(self, small_model_config, rng):
        """Analytic gradients match central differences."""
        config = small_model_config.model_copy(update={"use_self_spatial": False})
        fusion = MultiAgentFusion(config, rng)
        maps = [Tensor(rng.normal(size=(2, 2, 16))) for _ in range(2)]

        def loss():
            out = fusion(maps, [V, I], np.array([[0, 1], [2, 3]]))
            return (out * out).mean()

        report = gradient_check(loss, fusion.parameters(), count=12)
        assert report.entries
        assert report.passed, report.max_error


class TestMapGathering:
    """Tests for nearest-polyline map inputs."""

    def test_polyline_attributes(self):
        """Columns are position, step to the next point, type and previous point."""
        attrs = polyline_attributes(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]), 1)
        assert attrs.shape == (3, 7)
        np.testing.assert_allclose(attrs[:, 2], [1.0, 2.0, 2.0])
        np.testing.assert_allclose(attrs[:, 4], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(attrs[:, 5], [0.0, 0.0, 1.0])

    def test_empty_map_is_fully_masked(self, small_pillar_config):
        """No polylines gives an all-False mask and zero inputs."""
        grid = build_map_grid(
            VectorMap(), (0.0, 0.0, 0.0), small_pillar_config, (10, 8), 3
        )
        assert grid.waypoints.shape == (10, 8, 3, 10, 7)
        assert not grid.mask.any()
        assert not grid.waypoints.any()

    def test_single_polyline_is_nearest_everywhere(self, small_pillar_config):
        """With one lane every cell holds it in its first slot only."""
        vector_map = VectorMap(polylines=(straight_lane(0.0),))
        grid = build_map_grid(
            vector_map, (0.0, 0.0, 0.0), small_pillar_config, (10, 8), 3
        )
        assert grid.mask[..., 0].all()
        assert not grid.mask[..., 1:].any()

    def test_nearest_polyline_comes_first(self):
        """Sites pick the closer lane first; centers are site-relative and scaled."""
        vector_map = VectorMap(polylines=(straight_lane(10.0), straight_lane(-10.0)))
        sites = np.array([[0.0, 8.0], [0.0, -8.0]])
        inputs, mask, centers = gather_polylines(vector_map, (0.0, 0.0, 0.0), sites, 2)
        assert mask.all()
        np.testing.assert_allclose(centers[0, 0], [0.0, 0.2], atol=1e-9)
        np.testing.assert_allclose(centers[1, 0], [0.0, -0.2], atol=1e-9)
        np.testing.assert_allclose(centers[0, 1], [0.0, -1.8], atol=1e-9)
        # First waypoint of the near lane relative to the site, in decametres
        np.testing.assert_allclose(inputs[0, 0, 0, :2], [-0.9, 0.2], atol=1e-9)

    def test_ego_pose_moves_the_map(self):
        """Polylines are expressed in the ego frame."""
        vector_map = VectorMap(polylines=(straight_lane(10.0),))
        sites = np.zeros((1, 2))
        _, _, shifted = gather_polylines(vector_map, (0.0, 10.0, 0.0), sites, 1)
        np.testing.assert_allclose(shifted[0, 0], [0.0, 0.0], atol=1e-9)

    def test_pooling_takes_channel_max(self):
        """Max over waypoints: [1, 0] and [0, 1] pool to [1, 1]."""
        pooled = pool_waypoints(Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])))
        np.testing.assert_array_equal(pooled.data, [1.0, 1.0])


class TestMapBevFusion:
    """Tests for BEV-to-map attention."""

    def grid(self, rng, mask):
        h, w, k = mask.shape
        return MapGridFeature(
            waypoints=rng.normal(size=(h, w, k, 10, 7)),
            mask=mask,
            centers=rng.normal(size=(h, w, k, 2)),
        )

    def test_encoder_zeroes_masked_slots(self, rng):
        """Padding slots produce zero tokens."""
        mask = np.zeros((2, 2, 3), dtype=bool)
        mask[..., 0] = True
        tokens = MapEncoder(16, 8, rng)(self.grid(rng, mask)).data
        assert tokens.shape == (2, 2, 3, 16)
        assert not tokens[..., 1:, :].any()

    def test_masked_map_tokens_have_no_influence(self, rng):
        """With every map slot masked, map token values do not matter."""
        fusion = MapBevFusion(16, 2, rng)
        feature = self.grid(rng, np.zeros((2, 4, 3), dtype=bool))
        bev = Tensor(rng.normal(size=(2, 4, 16)))
        first = fusion(bev, Tensor(rng.normal(size=(2, 4, 3, 16))), feature).data
        second = fusion(bev, Tensor(rng.normal(size=(2, 4, 3, 16))), feature).data
        np.testing.assert_allclose(first, second, atol=1e-6)

    def test_attention_rows_are_distributions(self, rng):
        """Captured weights sum to one and masked slots get zero weight."""
        fusion = MapBevFusion(16, 2, rng)
        mask = np.ones((2, 4, 3), dtype=bool)
        mask[0, 0, 1:] = False
        feature = self.grid(rng, mask)
        bev = Tensor(rng.normal(size=(2, 4, 16)))
        with capture_attention() as captured:
            fusion(bev, Tensor(rng.normal(size=(2, 4, 3, 16))), feature)
        weights = captured[0]
        assert weights.shape == (2, 4, 2, 1, 4)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-5)
        np.testing.assert_array_equal(weights[0, 0, :, :, 2:], 0.0)

    def test_shape_mismatch_raises(self, rng):
        """Map tokens must match the BEV grid."""
        fusion = MapBevFusion(16, 2, rng)
        feature = self.grid(rng, np.ones((2, 4, 3), dtype=bool))
        with pytest.raises(ShapeError):
            fusion(
                Tensor(np.zeros((2, 4, 16))), Tensor(np.zeros((2, 2, 3, 16))), feature
            )
