"""
Tests for numcore/optim.py, numcore/checkpoint.py and Module state handling.

Tests cover:
- Adam update values and determinism
- Checkpoint save/load and corruption handling
- Loading parameter state into modules
"""

import numpy as np
import pytest

from v2xpnp_desk.numcore.checkpoint import (
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from v2xpnp_desk.numcore.layers import MLP, Linear
from v2xpnp_desk.numcore.optim import AdamState, adam_step
from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.errors import CheckpointError


class TestAdam:
    """Tests for adam_step."""

    def test_first_step_moves_by_lr(self):
        """Bias correction makes the first step lr * sign(grad)."""
        p = Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState(lr=0.1)
        adam_step(state, {"p": p}, {"p": np.array([0.5, -3.0], dtype=np.float32)})
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)
        assert state.step == 1

    def test_missing_gradient_leaves_parameter(self):
        """Parameters without a gradient are untouched."""
        p = Tensor([1.0], requires_grad=True)
        q = Tensor([2.0], requires_grad=True)
        state = AdamState(lr=0.1, weight_decay=0.5)
        adam_step(state, {"p": p, "q": q}, {"p": np.array([1.0], dtype=np.float32)})
        assert q.data[0] == 2.0
        assert "q" not in state.m

    def test_weight_decay_shrinks_parameters(self):
        """With zero gradient only decay acts."""
        p = Tensor([4.0], requires_grad=True)
        state = AdamState(lr=0.1, weight_decay=0.1)
        adam_step(state, {"p": p}, {"p": np.zeros(1, dtype=np.float32)})
        np.testing.assert_allclose(p.data, [4.0 - 0.1 * 0.1 * 4.0], atol=1e-6)

    def test_deterministic(self):
        """Same state and gradients give the same parameters."""
        results = []
        for _ in range(2):
            p = Tensor(np.linspace(-1, 1, 5), requires_grad=True)
            state = AdamState(lr=0.01, weight_decay=0.01)
            for step in range(3):
                g = np.full(5, step + 1.0, dtype=np.float32)
                adam_step(state, {"p": p}, {"p": g})
            results.append(p.numpy())
        np.testing.assert_array_equal(results[0], results[1])


class TestCheckpoint:
    """Tests for the binary checkpoint format."""

    def test_save_and_load(self, tmp_path):
        """Loaded tensors equal the saved ones, names and order included."""
        rng = np.random.default_rng(0)
        mlp = MLP([4, 8, 2], rng)
        path = save_checkpoint(mlp.parameters(), tmp_path / "model.ckpt")
        loaded = load_checkpoint(path)
        assert list(loaded) == list(mlp.parameters())
        for name, tensor in mlp.parameters().items():
            np.testing.assert_array_equal(loaded[name], tensor.data)

    def test_bad_magic(self):
        """Foreign bytes are rejected."""
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"NOTACKPT" + b"\x00" * 16)

    def test_truncated(self):
        """A cut-off file is rejected."""
        blob = encode_checkpoint({"w": np.ones((3, 3), dtype=np.float32)})
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(blob[:-5])

    def test_trailing_bytes(self):
        """Garbage after the last tensor is rejected."""
        blob = encode_checkpoint({"w": np.ones(2, dtype=np.float32)})
        with pytest.raises(CheckpointError):
            decode_checkpoint(blob + b"\x00")

    def test_missing_file(self, tmp_path):
        """A missing path raises CheckpointError."""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestModuleState:
    """Tests for Module.load_state_dict."""

    def test_round_trip_into_fresh_module(self):
        """State from one module loads into an identically shaped one."""
        a = Linear(3, 2, np.random.default_rng(0))
        b = Linear(3, 2, np.random.default_rng(1))
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.weight.data, b.weight.data)

    def test_shape_mismatch(self):
        """A differently shaped tensor is a checkpoint mismatch."""
        a = Linear(3, 2, np.random.default_rng(0))
        b = Linear(3, 4, np.random.default_rng(0))
        with pytest.raises(CheckpointError, match="mismatch"):
            b.load_state_dict(a.state_dict())

    def test_missing_names(self):
        """Missing parameters are a checkpoint mismatch."""
        a = Linear(3, 2, np.random.default_rng(0), bias=False)
        b = Linear(3, 2, np.random.default_rng(0))
        with pytest.raises(CheckpointError, match="mismatch"):
            b.load_state_dict(a.state_dict())
