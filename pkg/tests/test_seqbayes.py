"""Tests for sequential posterior propagation."""

import numpy as np
import pytest

from bayescl.errors import ConvergenceGateError
from bayescl.gmm import GaussianMixture, GmmConfig
from bayescl.hmc import HmcConfig, run_chains
from bayescl.models import (
    Activation,
    IsotropicGaussian,
    LabeledBatch,
    MlpSpec,
    ParamVector,
    predict_labels,
)
from bayescl.seqbayes import (
    PosteriorTarget,
    PropagationConfig,
    evaluate_samples,
    fidelity_check,
    propagate,
    run_multitask_hmc,
    thin,
)
from bayescl.tasks import Task, TaskStream
from bayescl.vcl import HeadMode, VclConfig, train_vcl
from bayescl_bench.datasets import gen_toy_tasks


def small_spec():
    return MlpSpec((2, 4, 1), Activation.TANH)


def small_stream(n_tasks=2):
    stream = gen_toy_tasks("gaussians", n_per_class=15, seed=0)
    return stream.prefix(n_tasks)


class TestPosteriorTarget:
    """Test the log posterior handed to the sampler."""

    def setup_method(self):
        """Set up a target on the first toy task."""
        self.spec = small_spec()
        self.batch = small_stream()[0].train
        self.prior = IsotropicGaussian(self.spec.n_params, 10.0)
        self.target = PosteriorTarget(self.spec, self.batch, self.prior)

    def test_dimension_checked(self):
        """Test the prior must match the parameter count."""
        with pytest.raises(ValueError, match="does not match"):
            PosteriorTarget(self.spec, self.batch, IsotropicGaussian(3))

    def test_value_matches_parts(self):
        """Test value_and_grad agrees with the summed parts."""
        theta = ParamVector.initialize(self.spec, np.random.default_rng(0)).values
        value, _ = self.target.value_and_grad(theta)
        assert value == pytest.approx(sum(self.target.parts(theta)), abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        """Test the gradient against central differences."""
        theta = ParamVector.initialize(self.spec, np.random.default_rng(1)).values
        _, grad = self.target.value_and_grad(theta)
        eps = 1e-5
        numeric = np.array(
            [
                (
                    self.target.log_density(theta + eps * e)
                    - self.target.log_density(theta - eps * e)
                )
                / (2 * eps)
                for e in np.eye(theta.size)
            ]
        )
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)

    def test_mixture_prior(self):
        """Test a mixture prior contributes its own gradient."""
        d = self.spec.n_params
        mixture = GaussianMixture([1.0], np.zeros((1, d)), np.eye(d)[None])
        target = PosteriorTarget(self.spec, LabeledBatch.empty(2), mixture)
        theta = np.full(d, 0.5)
        value, grad = target.value_and_grad(theta)
        assert value == pytest.approx(mixture.log_density(theta))
        np.testing.assert_allclose(grad, -theta)


class TestEvaluateSamples:
    """Test posterior-predictive accuracy."""

    def setup_method(self):
        """Set up a stream and a few parameter samples."""
        self.spec = small_spec()
        self.stream = small_stream()
        rng = np.random.default_rng(3)
        self.samples = np.stack(
            [ParamVector.initialize(self.spec, rng).values for _ in range(4)]
        )

    def test_single_sample_is_deterministic_net(self):
        """Test one sample gives the plain network accuracy."""
        row = evaluate_samples(self.samples[:1], self.spec, self.stream)
        for task, acc in zip(self.stream, row.accuracies, strict=True):
            predicted = predict_labels(self.samples[0], self.spec, task.test.inputs)
            assert acc == np.mean(predicted == task.test.labels)

    def test_duplicates_do_not_change_accuracy(self):
        """Test duplicating every sample leaves the accuracy unchanged."""
        doubled = np.concatenate([self.samples, self.samples])
        assert evaluate_samples(doubled, self.spec, self.stream) == evaluate_samples(
            self.samples, self.spec, self.stream
        )

    def test_prior_predictive_on_random_labels(self):
        """Test prior samples score about one half on a balanced task."""
        rng = np.random.default_rng(4)
        inputs = rng.normal(size=(400, 2))
        labels = np.resize([0, 1], 400)
        batch = LabeledBatch(inputs, labels, 0)
        stream = TaskStream((Task(0, batch, batch, (0, 1)),))
        prior = IsotropicGaussian(self.spec.n_params, 10.0)
        row = evaluate_samples(prior.sample(200, rng), self.spec, stream)
        assert abs(row.mean - 0.5) < 0.1

    def test_thin(self):
        """Test thinning keeps every k-th row and at most the cap."""
        samples = np.arange(10)[:, None]
        assert thin(samples, 20).shape[0] == 10
        thinned = thin(samples, 4)
        assert thinned[:, 0].tolist() == [0, 3, 6, 9]


class TestFidelityCheck:
    """Test the mixture-versus-samples comparison."""

    def test_identical_inputs_give_identical_results(self):
        """Test the check is deterministic."""
        spec = small_spec()
        task = small_stream()[0]
        rng = np.random.default_rng(0)
        samples = rng.normal(scale=0.3, size=(300, spec.n_params))
        mixture = GaussianMixture(
            [1.0], samples.mean(axis=0)[None], np.cov(samples, rowvar=False)[None]
        )
        first = fidelity_check(mixture, samples, spec, task, 100, seed=2)
        second = fidelity_check(mixture, samples, spec, task, 100, seed=2)
        assert first == second

    def test_empty_samples(self):
        """Test an empty sample matrix is rejected."""
        spec = small_spec()
        mixture = GaussianMixture(
            [1.0], np.zeros((1, spec.n_params)), np.eye(spec.n_params)[None]
        )
        with pytest.raises(ValueError):
            fidelity_check(
                mixture, np.zeros((0, spec.n_params)), spec, small_stream()[0]
            )


class TestPropagate:
    """Test the sample-fit-propagate loop on a small network."""

    def setup_method(self):
        """Set up fast sampler and mixture settings."""
        self.spec = small_spec()
        self.hmc = HmcConfig(
            step_size=0.02, n_leapfrog=10, n_burnin=100, n_samples=200, n_chains=2
        )
        self.gmm = GmmConfig(candidates=(1, 2), n_restarts=2, max_iter=50)
        self.cfg = PropagationConfig(
            eval_samples=100, enforce_ess_gate=False, em_samples=400
        )

    def test_records_every_task(self):
        """Test one record and one accuracy row per task."""
        stream = small_stream(2)
        run = propagate(stream, self.spec, self.hmc, self.gmm, self.cfg)
        assert [r.task_id for r in run.records] == [0, 1]
        assert run.accuracy.n_tasks == 2
        assert np.isnan(run.accuracy.values[0, 1])
        assert not np.isnan(run.accuracy.values[1, 0])
        for record in run.records:
            assert record.mixture.dim == self.spec.n_params
            assert record.samples.shape == (400, self.spec.n_params)
            assert {"n_components", "em_history", "fidelity"} <= set(
                record.diagnostics
            )
            assert record.diagnostics["n_chains"] == 2
        assert len(run.mixtures) == 2

    def test_single_task_equals_plain_hmc(self):
        """Test one task reproduces a direct HMC run on that task."""
        stream = small_stream(1)
        run = propagate(stream, self.spec, self.hmc, self.gmm, self.cfg)

        prior = IsotropicGaussian(self.spec.n_params, self.cfg.prior_precision)
        target = PosteriorTarget(self.spec, stream[0].train, prior)
        init = prior.sample(1, np.random.default_rng(self.hmc.seed))[0]
        chains = run_chains(target, init, self.hmc)
        direct = evaluate_samples(
            chains.samples, self.spec, stream, 0, self.cfg.eval_samples
        )
        np.testing.assert_array_equal(run.records[0].samples, chains.samples)
        assert run.accuracy.row(0).tolist() == list(direct.accuracies)

    def test_deterministic(self):
        """Test two runs with equal seeds agree exactly."""
        stream = small_stream(2)
        a = propagate(stream, self.spec, self.hmc, self.gmm, self.cfg)
        b = propagate(stream, self.spec, self.hmc, self.gmm, self.cfg)
        np.testing.assert_array_equal(a.accuracy.values, b.accuracy.values)
        np.testing.assert_array_equal(a.records[1].samples, b.records[1].samples)

    def test_ess_gate(self):
        """Test an unreachable ESS threshold aborts the run."""
        cfg = PropagationConfig(min_ess=1e9, enforce_ess_gate=True, eval_samples=50)
        with pytest.raises(ConvergenceGateError) as exc_info:
            propagate(small_stream(1), self.spec, self.hmc, self.gmm, cfg)
        assert "min_pooled_ess" in exc_info.value.diagnostics


@pytest.mark.slow
class TestToyBenchmark:
    """Five-task toy run with the toy network against its pooled upper bound."""

    @classmethod
    def setup_class(cls):
        """Run sequential and pooled HMC once on the same stream."""
        cls.stream = gen_toy_tasks("gaussians", n_per_class=100, seed=0)
        cls.spec = MlpSpec.toy_bnn()
        cls.hmc = HmcConfig(
            step_size=0.002,
            n_leapfrog=50,
            n_burnin=2000,
            n_samples=1000,
            n_chains=4,
        )
        cls.cfg = PropagationConfig(eval_samples=200, enforce_ess_gate=False, threads=4)
        cls.run = propagate(cls.stream, cls.spec, cls.hmc, GmmConfig(), cls.cfg)
        _, cls.pooled = run_multitask_hmc(cls.stream, cls.spec, cls.hmc, cls.cfg)

    def test_first_task_is_learnt(self):
        """Test the first task is fitted before anything is forgotten."""
        assert self.run.accuracy.values[0, 0] > 0.95

    def test_pooled_upper_bound(self):
        """Test HMC on the pooled tasks solves every task."""
        assert self.pooled.mean >= 0.98

    def test_sequential_falls_short_of_pooled(self):
        """Test the propagated run ends at least 0.1 below the pooled bound."""
        assert self.run.accuracy.final_average <= self.pooled.mean - 0.1

    def test_mixture_fidelity_on_every_task(self):
        """Test each fitted prior predicts its task like the samples it came from."""
        assert len(self.run.records) == len(self.stream)
        for record in self.run.records:
            hmc_acc, gmm_acc = record.fidelity
            assert abs(hmc_acc - gmm_acc) < 0.05, record.task_id

    def test_multi_head_vcl_does_better(self):
        """Test multi-head VCL ends above the propagated run."""
        cfg = VclConfig(epochs=60, map_epochs=30, learning_rate=1e-2)
        vcl = train_vcl(self.stream, cfg, HeadMode.MULTI, seed=0)
        assert vcl.accuracy.final_average > self.run.accuracy.final_average
