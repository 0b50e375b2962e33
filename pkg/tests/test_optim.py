"""Tests for optimizers and array encodings."""

from pathlib import Path
import struct
import tempfile

import numpy as np
import pytest

from bayescl.optim import Adam, minibatches
from bayescl.serialization import (
    PARAMS_MAGIC,
    SAMPLES_MAGIC,
    decode_array,
    encode_array,
    read_float_block,
    write_float_block,
)


class TestAdam:
    """Test the Adam optimizer."""

    def test_first_step_is_signed_learning_rate(self):
        """Test bias correction makes the first step lr * sign(g)."""
        step = Adam(0.1).step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
        np.testing.assert_allclose(step, [-0.1, 0.1, -0.1], rtol=1e-4)

    def test_zero_gradient_is_a_no_op(self):
        """Test a zero gradient leaves the parameters exactly in place."""
        params = np.array([0.3, -1.2])
        optimizer = Adam(0.1)
        for _ in range(5):
            params = optimizer.step(params, np.zeros(2))
        np.testing.assert_array_equal(params, [0.3, -1.2])

    def test_minimizes_quadratic(self):
        """Test Adam reaches the minimum of a shifted quadratic."""
        target = np.array([1.0, -2.0, 0.5])
        params = np.zeros(3)
        optimizer = Adam(0.05)
        for _ in range(2000):
            params = optimizer.step(params, 2.0 * (params - target))
        np.testing.assert_allclose(params, target, atol=1e-3)

    def test_does_not_modify_input(self):
        """Test the input array is left untouched."""
        params = np.ones(2)
        Adam(0.1).step(params, np.ones(2))
        np.testing.assert_array_equal(params, 1.0)

    def test_reset(self):
        """Test reset restarts bias correction."""
        optimizer = Adam(0.1)
        optimizer.step(np.zeros(1), np.ones(1))
        optimizer.reset()
        assert optimizer.step_count == 0

    def test_learning_rate_checked(self):
        """Test a non-positive learning rate is rejected."""
        with pytest.raises(ValueError, match="learning_rate"):
            Adam(0.0)


class TestMinibatches:
    """Test shuffled index chunks."""

    def test_partition(self):
        """Test chunks cover every index exactly once."""
        chunks = minibatches(10, 4, np.random.default_rng(0))
        assert [len(c) for c in chunks] == [4, 4, 2]
        assert sorted(np.concatenate(chunks).tolist()) == list(range(10))

    def test_empty(self):
        """Test no rows give no chunks."""
        assert minibatches(0, 4, np.random.default_rng(0)) == []

    def test_batch_size_checked(self):
        """Test a non-positive batch size is rejected."""
        with pytest.raises(ValueError, match="batch_size"):
            minibatches(5, 0, np.random.default_rng(0))


class TestFloatBlocks:
    """Test the binary parameter and sample encodings."""

    def setup_method(self):
        """Set up a scratch file path."""
        self.tmpdir = tempfile.TemporaryDirectory()
        self.path = Path(self.tmpdir.name) / "block.bin"

    def teardown_method(self):
        """Remove the scratch directory."""
        self.tmpdir.cleanup()

    def test_layout(self):
        """Test a 16-byte header followed by little-endian doubles."""
        write_float_block(self.path, SAMPLES_MAGIC, np.array([[1.5, -2.0]]))
        raw = self.path.read_bytes()
        assert len(raw) == 16 + 16
        assert struct.unpack("<4sIQ", raw[:16]) == (SAMPLES_MAGIC, 1, 2)
        assert struct.unpack("<d", raw[16:24]) == (1.5,)

    def test_wrong_magic(self):
        """Test a block read with another magic is rejected."""
        write_float_block(self.path, SAMPLES_MAGIC, np.zeros(2))
        with pytest.raises(ValueError, match="Bad magic"):
            read_float_block(self.path, PARAMS_MAGIC)

    def test_unknown_version(self):
        """Test an unsupported version is rejected."""
        self.path.write_bytes(struct.pack("<4sIQ", PARAMS_MAGIC, 9, 0))
        with pytest.raises(ValueError, match="version"):
            read_float_block(self.path, PARAMS_MAGIC)

    def test_truncated(self):
        """Test short headers and payloads are rejected."""
        write_float_block(self.path, PARAMS_MAGIC, np.arange(4.0))
        self.path.write_bytes(self.path.read_bytes()[:-3])
        with pytest.raises(ValueError, match="Truncated payload"):
            read_float_block(self.path, PARAMS_MAGIC)
        self.path.write_bytes(b"BNNP")
        with pytest.raises(ValueError, match="Truncated header"):
            read_float_block(self.path, PARAMS_MAGIC)

    def test_json_encoding_is_exact(self):
        """Test base64 encoding keeps every bit and the shape."""
        array = np.array([[0.1, 1.0 / 3.0], [np.pi, -0.0]])
        decoded = decode_array(encode_array(array))
        assert decoded.shape == (2, 2)
        assert decoded.tobytes() == array.tobytes()
