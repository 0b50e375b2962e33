"""Tests for point-estimate baselines."""

import numpy as np
import pytest

from bayescl.baselines import (
    SgdConfig,
    run_sgd_multitask,
    run_sgd_sequential,
    train_map,
)
from bayescl.models import Activation, MlpSpec, ParamVector, predict_labels
from bayescl_bench.datasets import gen_toy_tasks


def small_spec():
    return MlpSpec((2, 8, 1), Activation.TANH)


class TestSgdConfig:
    """Test optimizer settings."""

    def test_defaults(self):
        """Test the default optimizer settings."""
        cfg = SgdConfig()
        assert cfg.learning_rate == 1e-2
        assert cfg.prior_precision == 0.0

    def test_invalid(self):
        """Test invalid settings are rejected."""
        with pytest.raises(ValueError, match="learning_rate"):
            SgdConfig(learning_rate=0.0)
        with pytest.raises(ValueError, match="batch_size"):
            SgdConfig(batch_size=0)
        with pytest.raises(ValueError, match="prior_precision"):
            SgdConfig(prior_precision=-1.0)


class TestTrainMap:
    """Test minibatch Adam training."""

    def setup_method(self):
        """Set up the first toy task."""
        self.task = gen_toy_tasks("gaussians", n_per_class=20, seed=0)[0]
        self.spec = small_spec()

    def test_zero_epochs_returns_init(self):
        """Test zero epochs return the starting point."""
        init = ParamVector.initialize(self.spec, np.random.default_rng(0))
        params = train_map(self.spec, self.task.train, SgdConfig(epochs=0), init)
        assert params is init

    def test_separable_task(self):
        """Test one separable task is fit."""
        cfg = SgdConfig(learning_rate=5e-2, epochs=200)
        params = train_map(self.spec, self.task.train, cfg, seed=0)
        predicted = predict_labels(params, self.spec, self.task.test.inputs)
        assert np.mean(predicted == self.task.test.labels) > 0.95

    def test_deterministic(self):
        """Test a seed fixes the result."""
        cfg = SgdConfig(epochs=5)
        a = train_map(self.spec, self.task.train, cfg, seed=2)
        b = train_map(self.spec, self.task.train, cfg, seed=2)
        np.testing.assert_array_equal(a.values, b.values)

    def test_weight_decay_shrinks(self):
        """Test a Gaussian prior gives smaller weights."""
        plain = train_map(self.spec, self.task.train, SgdConfig(epochs=100), seed=0)
        decayed = train_map(
            self.spec,
            self.task.train,
            SgdConfig(epochs=100, prior_precision=50.0),
            seed=0,
        )
        assert np.linalg.norm(decayed.values) < np.linalg.norm(plain.values)


class TestStreams:
    """Test sequential and pooled training."""

    def setup_method(self):
        """Set up a three-task toy stream."""
        self.stream = gen_toy_tasks("gaussians", n_per_class=20, seed=0).prefix(3)
        self.cfg = SgdConfig(epochs=5)

    def test_sequential_matrix(self):
        """Test sequential training fills the lower triangle."""
        matrix = run_sgd_sequential(self.stream, small_spec(), self.cfg)
        assert matrix.n_tasks == 3
        assert not np.any(np.isnan(matrix.values[np.tril_indices(3)]))
        assert np.isnan(matrix.values[0, 2])

    def test_multitask_row(self):
        """Test pooled training gives one accuracy per task."""
        row = run_sgd_multitask(self.stream, small_spec(), self.cfg)
        assert len(row.accuracies) == 3


@pytest.mark.slow
class TestToyBaselines:
    """Five-task toy runs with the toy network."""

    def test_multitask_upper_bound(self):
        """Test pooled training solves every toy task."""
        stream = gen_toy_tasks("gaussians", n_per_class=100, seed=0)
        row = run_sgd_multitask(stream, MlpSpec.toy_bnn(), SgdConfig(epochs=300))
        assert row.mean >= 0.98

    def test_sequential_forgets(self):
        """Test plain fine-tuning forgets the alternating toy tasks."""
        stream = gen_toy_tasks("gaussians", n_per_class=100, seed=0)
        matrix = run_sgd_sequential(stream, MlpSpec.toy_bnn(), SgdConfig(epochs=100))
        assert matrix.values[0, 0] > 0.95
        assert matrix.final_average < 0.9
