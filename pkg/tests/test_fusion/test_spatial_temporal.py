"""
Tests for fusion/spatial.py and fusion/temporal.py - window attention and
temporal fusion.

Tests cover:
- Window partition and merge layout
- Relative position index
- Split-attention weights across window sizes
- Single-frame identity and masking of missing history frames
- Per-cell independence of temporal attention
- Gradient check through temporal fusion
"""

import numpy as np
import pytest

from v2xpnp_desk.fusion.spatial import (
    SelfSpatialFusion,
    relative_position_index,
    window_merge,
    window_partition,
)
from v2xpnp_desk.fusion.temporal import TemporalFusion
from v2xpnp_desk.numcore.gradcheck import gradient_check
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import ShapeError


class TestWindowPartition:
    """Tests for window partition and merge."""

    def test_four_by_four_into_four_windows(self):
        """A 4x4 grid with P=2 gives 2x2 windows of four cells each."""
        x = Tensor(np.arange(16, dtype=np.float32).reshape(4, 4, 1))
        windows = window_partition(x, 2)
        assert windows.shape == (2, 2, 4, 1)
        # Window (0, 0) holds cells (0,0), (0,1), (1,0), (1,1)
        np.testing.assert_array_equal(windows.data[0, 0, :, 0], [0, 1, 4, 5])
        np.testing.assert_array_equal(windows.data[1, 1, :, 0], [10, 11, 14, 15])

    @pytest.mark.parametrize("size", [2, 4])
    def test_merge_undoes_partition(self, size, rng):
        """merge(partition(x)) is x, with leading batch axes."""
        x = Tensor(rng.normal(size=(3, 8, 12, 5)))
        merged = window_merge(window_partition(x, size), size)
        np.testing.assert_array_equal(merged.data, x.data)

    def test_indivisible_grid_raises(self):
        """Grids that windows do not tile are rejected."""
        with pytest.raises(ShapeError):
            window_partition(Tensor(np.zeros((6, 4, 2))), 4)

    def test_relative_position_index(self):
        """Diagonal points at the zero offset; indices cover the table."""
        idx = relative_position_index(2)
        assert idx.shape == (4, 4)
        np.testing.assert_array_equal(np.diag(idx), [4, 4, 4, 4])
        assert idx.min() >= 0 and idx.max() < 9
        # Opposite offsets mirror around the center entry
        np.testing.assert_array_equal(idx + idx.T, np.full((4, 4), 8))


class TestSelfSpatialFusion:
    """Tests for multi-scale window attention."""

    def test_branch_weights_sum_to_one(self, rng):
        """Split-attention weights are a distribution over branches per channel."""
        fusion = SelfSpatialFusion(8, (2, 4), (2, 2), rng)
        x = Tensor(rng.normal(size=(8, 8, 8)))
        outputs = [branch(x) for branch in fusion.branches]
        weights = fusion.branch_weights(outputs).data
        assert weights.shape == (2, 8)
        np.testing.assert_allclose(weights.sum(axis=0), np.ones(8), atol=1e-6)
        assert (weights > 0).all()

    def test_single_branch_is_returned_directly(self, rng):
        """With one window size the output is that branch's output."""
        fusion = SelfSpatialFusion(8, (2,), (2,), rng)
        x = Tensor(rng.normal(size=(4, 4, 8)))
        np.testing.assert_array_equal(fusion(x).data, fusion.branches[0](x).data)

    def test_output_keeps_shape(self, rng):
        """Batched maps keep their shape."""
        fusion = SelfSpatialFusion(8, (2, 4), (2, 4), rng)
        x = Tensor(rng.normal(size=(3, 4, 8, 8)))
        assert fusion(x).shape == (3, 4, 8, 8)

    def test_head_count_mismatch_raises(self, rng):
        """One head count per window size."""
        with pytest.raises(ShapeError):
            SelfSpatialFusion(8, (2, 4), (2,), rng)


class TestTemporalFusion:
    """Tests for per-cell temporal attention."""

    def test_single_frame_identity(self, small_model_config, rng):
        """T=1 with identity projections and no time term returns the frame."""
        config = small_model_config.model_copy(
            update={"residual": False, "use_self_spatial": False}
        )
        fusion = TemporalFusion(config, rng)
        fusion.time_embed.weight.data[:] = 0.0
        block = fusion.attention[0]
        block.attn.wv.set_identity()
        block.attn.wo.set_identity()
        x = rng.normal(size=(1, 4, 4, 16))
        out = fusion(Tensor(x), np.array([True]))
        np.testing.assert_allclose(out.data, x[0], atol=1e-5)

    def test_missing_frames_are_ignored(self, small_model_config, rng):
        """Masked history frames leave the result equal to a T=1 run."""
        fusion = TemporalFusion(small_model_config, rng)
        x = rng.normal(size=(3, 4, 8, 16))
        masked = fusion(Tensor(x), np.array([False, False, True]))
        alone = fusion(Tensor(x[2:]), np.array([True]))
        np.testing.assert_allclose(masked.data, alone.data, atol=1e-5)

    def test_history_changes_output(self, small_model_config, rng):
        """Valid older frames contribute to the fused map."""
        fusion = TemporalFusion(small_model_config, rng)
        x = rng.normal(size=(3, 4, 8, 16))
        full = fusion(Tensor(x), np.array([True, True, True]))
        alone = fusion(Tensor(x[2:]), np.array([True]))
        assert not np.allclose(full.data, alone.data, atol=1e-4)

    def test_cells_are_independent(self, small_model_config, rng):
        """Without spatial attention, permuting cells permutes the output."""
        config = small_model_config.model_copy(update={"use_self_spatial": False})
        fusion = TemporalFusion(config, rng)
        x = rng.normal(size=(2, 4, 4, 16))
        valid = np.array([True, True])
        perm = rng.permutation(4)
        out = fusion(Tensor(x), valid).data
        permuted = fusion(Tensor(x[:, :, perm]), valid).data
        np.testing.assert_allclose(permuted, out[:, perm], atol=1e-5)

    def test_output_shape(self, small_model_config, rng):
        """(T, H, W, C) in, (H, W, C) out."""
        fusion = TemporalFusion(small_model_config, rng)
        out = fusion(Tensor(rng.normal(size=(5, 4, 8, 16))), np.ones(5, dtype=bool))
        assert out.shape == (4, 8, 16)

    def test_no_valid_frame_raises(self, small_model_config, rng):
        """At least one frame must be valid."""
        fusion = TemporalFusion(small_model_config, rng)
        with pytest.raises(ShapeError):
            fusion(Tensor(np.zeros((2, 4, 4, 16))), np.array([False, False]))

    def test_mask_length_mismatch_raises(self, small_model_config, rng):
        """The validity mask has one entry per frame."""
        fusion = TemporalFusion(small_model_config, rng)
        with pytest.raises(ShapeError):
            fusion(Tensor(np.zeros((2, 4, 4, 16))), np.array([True]))

    def test_gradient_check(self, small_model_config, rng):
        """Analytic gradients match central differences."""
        fusion = TemporalFusion(small_model_config, rng)
        x = rng.normal(size=(3, 4, 4, 16))
        valid = np.array([True, False, True])

        def loss():
            out = fusion(Tensor(x), valid)
            return (out * out).mean()

        report = gradient_check(loss, fusion.parameters(), count=12)
        assert report.entries
        assert report.passed, report.max_error
