"""Tests for the closed-form Gaussian filters."""

from pathlib import Path
import tempfile

import numpy as np
import pytest

from bayescl.conjugate import (
    ChangepointScenario,
    GaussianBelief,
    OuDynamics,
    batch_posterior,
    filter_step,
    kalman_bnn_filter,
    kalman_bnn_predict,
    kalman_bnn_update,
    linearization_slope,
    run_changepoint,
    run_filter,
)
from bayescl.models import Activation, MlpSpec, OutputKind, ParamVector


class TestGaussianBelief:
    """Test belief validation."""

    def test_variance_positive(self):
        """Test a zero variance is rejected."""
        with pytest.raises(ValueError, match="positive"):
            GaussianBelief(0.0, 0.0)

    def test_finite(self):
        """Test NaN means are rejected."""
        with pytest.raises(ValueError, match="finite"):
            GaussianBelief(float("nan"), 1.0)


class TestFilterStep:
    """Test the scalar conjugate update."""

    def test_hand_evaluation(self):
        """Test prior (0, 1), y=2, unit noise gives (1, 0.5)."""
        belief = filter_step(GaussianBelief(0.0, 1.0), 2.0, 1.0)
        assert belief.mean == pytest.approx(1.0, abs=1e-15)
        assert belief.variance == pytest.approx(0.5, abs=1e-15)

    def test_uninformative_observation(self):
        """Test a huge noise variance leaves the prior in place."""
        prior = GaussianBelief(0.3, 2.0)
        belief = filter_step(prior, 50.0, 1e12)
        assert belief.mean == pytest.approx(prior.mean, abs=1e-6)
        assert belief.variance == pytest.approx(prior.variance, abs=1e-6)

    def test_order_invariance(self):
        """Test swapping two observations gives the same belief."""
        prior = GaussianBelief(0.0, 1.0)
        a = run_filter(prior, [0.7, -1.9], 0.5)[-1]
        b = run_filter(prior, [-1.9, 0.7], 0.5)[-1]
        assert abs(a.mean - b.mean) < 1e-12
        assert abs(a.variance - b.variance) < 1e-12

    def test_batch_equals_stream(self):
        """Test one batch update equals the streamed updates."""
        prior = GaussianBelief(0.5, 3.0)
        ys = np.random.default_rng(0).normal(size=200)
        streamed = run_filter(prior, ys, 2.0)[-1]
        batched = batch_posterior(prior, ys, 2.0)
        assert abs(streamed.mean - batched.mean) < 1e-10
        assert abs(streamed.variance - batched.variance) < 1e-10

    def test_noise_must_be_positive(self):
        """Test a non-positive noise variance is rejected."""
        with pytest.raises(ValueError, match="noise_var"):
            filter_step(GaussianBelief(0.0, 1.0), 1.0, 0.0)


class TestChangepoint:
    """Test the two-phase streams."""

    def test_balanced(self):
        """Test the balanced stream ends near the global mean 0."""
        trajectory = run_changepoint(ChangepointScenario.balanced(), seed=0)
        assert len(trajectory.beliefs) == 220
        final = trajectory.final
        assert abs(final.mean - 0.0) < 3.0 * final.std

    def test_imbalanced(self):
        """Test the imbalanced stream ends near 180/221."""
        scenario = ChangepointScenario.imbalanced()
        assert scenario.expected_final_mean == pytest.approx(180 / 221)
        final = run_changepoint(scenario, seed=0).final
        assert abs(final.mean - 180 / 221) < 3.0 * final.std

    def test_single_phase(self):
        """Test an empty second phase is plain filtering on the first."""
        scenario = ChangepointScenario(110, -1.0, 0, 1.0)
        trajectory = run_changepoint(scenario, seed=1)
        assert len(trajectory.beliefs) == 110
        assert abs(trajectory.final.mean + 1.0) < 3.0 * trajectory.final.std

    def test_variance_shrinks(self):
        """Test every observation tightens the belief."""
        variances = run_changepoint(ChangepointScenario.balanced()).variances
        assert np.all(np.diff(variances) < 0)

    def test_deterministic(self):
        """Test a seed fixes the stream."""
        a = run_changepoint(ChangepointScenario.balanced(), seed=4)
        b = run_changepoint(ChangepointScenario.balanced(), seed=4)
        np.testing.assert_array_equal(a.means, b.means)

    def test_invalid_counts(self):
        """Test the first phase needs an observation."""
        with pytest.raises(ValueError, match="Phase counts"):
            ChangepointScenario(0, -1.0, 10, 1.0)

    def test_csv(self):
        """Test the trajectory CSV has one row per observation."""
        trajectory = run_changepoint(ChangepointScenario(5, -1.0, 5, 1.0))
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "trajectory.csv"
            trajectory.to_csv(path)
            lines = path.read_text().splitlines()
        assert lines[0] == "t,observation,post_mean,post_var"
        assert len(lines) == 11
        assert float(lines[-1].split(",")[2]) == trajectory.final.mean


class TestKalmanBnn:
    """Test the weight-space Kalman filter."""

    def test_static_dynamics(self):
        """Test zero reversion and zero noise keep the belief."""
        belief = GaussianBelief(0.4, 0.3)
        assert kalman_bnn_predict(belief, OuDynamics()) == belief

    def test_additive_noise(self):
        """Test process noise adds to the variance."""
        predicted = kalman_bnn_predict(GaussianBelief(0.0, 1.0), OuDynamics(0.0, 0.1))
        assert predicted.variance == pytest.approx(1.1)

    def test_reversion(self):
        """Test reversion 0.5 maps (2, 1) to (1, noise + 4)."""
        predicted = kalman_bnn_predict(GaussianBelief(2.0, 1.0), OuDynamics(0.5, 0.2))
        assert predicted.mean == pytest.approx(1.0)
        assert predicted.variance == pytest.approx(4.2)

    def test_conventional_reversion(self):
        """Test the conventional variant shrinks the carried variance."""
        predicted = kalman_bnn_predict(
            GaussianBelief(2.0, 1.0), OuDynamics(0.5, 0.2, conventional=True)
        )
        assert predicted.variance == pytest.approx(0.45)

    def test_invalid_reversion(self):
        """Test reversion must lie in [0, 1)."""
        with pytest.raises(ValueError, match="reversion"):
            OuDynamics(1.0)

    def test_unit_slope_is_filter_step(self):
        """Test slope 1 reduces to the scalar filter."""
        belief = GaussianBelief(-0.2, 0.7)
        assert kalman_bnn_update(belief, None, 1.3, 1.0, 0.4) == filter_step(
            belief, 1.3, 0.4
        )

    def test_zero_slope(self):
        """Test a flat output leaves the belief unchanged."""
        belief = GaussianBelief(0.5, 2.0)
        assert kalman_bnn_update(belief, None, 10.0, 0.0, 1.0) == belief

    def test_slope_evaluated_at_input(self):
        """Test a slope function is evaluated at the observation input."""
        spec = MlpSpec((1, 1, 1), Activation.IDENTITY, OutputKind.EMBEDDING)
        params = ParamVector(np.array([0.3, 0.0, 1.0, 0.0]), spec)
        belief = GaussianBelief(0.0, 1.0)
        x = np.array([2.0])
        from_function = kalman_bnn_update(
            belief,
            x,
            1.0,
            lambda point: linearization_slope(params, spec, point, 0),
            0.5,
        )
        assert from_function == kalman_bnn_update(belief, x, 1.0, 2.0, 0.5)
        assert from_function.precision == pytest.approx(4.0 / 0.5 + 1.0)

    def test_linear_model_matches_scalar_kalman(self):
        """Test f(x; w) = w x filters like a scalar Kalman filter with H = x."""
        spec = MlpSpec((1, 1, 1), Activation.IDENTITY, OutputKind.EMBEDDING)
        params = ParamVector(np.array([0.0, 0.0, 1.0, 0.0]), spec)
        rng = np.random.default_rng(0)
        xs = rng.uniform(-2.0, 2.0, size=30)
        ys = 1.5 * xs + rng.normal(scale=0.5, size=30)
        prior = GaussianBelief(0.0, 1.0)
        beliefs = kalman_bnn_filter(
            params, spec, 0, xs[:, None], ys, prior, OuDynamics(), noise_var=0.25
        )

        mean, var = 0.0, 1.0
        for x, y, belief in zip(xs, ys, beliefs, strict=True):
            gain = var * x / (x * x * var + 0.25)
            mean = mean + gain * (y - x * mean)
            var = (1.0 - gain * x) * var
            assert belief.mean == pytest.approx(mean, abs=1e-10)
            assert belief.variance == pytest.approx(var, abs=1e-10)

    def test_linearization_slope(self):
        """Test the slope of f(x; w) = w x with respect to w is x."""
        spec = MlpSpec((1, 1, 1), Activation.IDENTITY, OutputKind.EMBEDDING)
        params = ParamVector(np.array([0.3, 0.0, 1.0, 0.0]), spec)
        assert linearization_slope(params, spec, np.array([2.5]), 0) == 2.5
        with pytest.raises(ValueError, match="out of range"):
            linearization_slope(params, spec, np.array([2.5]), 4)
