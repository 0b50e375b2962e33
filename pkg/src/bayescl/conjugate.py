"""Closed-form Gaussian filtering.

Covers the scalar conjugate filter with a known observation variance, the
changepoint streams used to show how data imbalance steers it, and the
Kalman-style update of a single BNN weight linearized around its optimum.
"""

from collections.abc import Callable, Iterable, Sequence
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .models import MlpSpec, ParamVector, network_output


@dataclass(frozen=True)
class GaussianBelief:
    """N(mean, variance) over a scalar."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise ValueError(
                f"Belief must be finite, got ({self.mean}, {self.variance})"
            )
        if self.variance <= 0:
            raise ValueError(f"Belief variance must be positive, got {self.variance}")

    @property
    def precision(self) -> float:
        return 1.0 / self.variance

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class OuDynamics:
    """Discretized Ornstein-Uhlenbeck drift of a weight between steps.

    Attributes:
        reversion: Reversion speed in [0, 1)
        noise_var: Process noise variance
        conventional: Scale the carried-over variance by (1 - reversion)^2
            instead of (1 - reversion)^-2

    """

    reversion: float = 0.0
    noise_var: float = 0.0
    conventional: bool = False

    def __post_init__(self):
        if not 0.0 <= self.reversion < 1.0:
            raise ValueError(f"reversion must lie in [0, 1), got {self.reversion}")
        if self.noise_var < 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")


def filter_step(belief: GaussianBelief, y: float, noise_var: float) -> GaussianBelief:
    """Condition a Gaussian belief on one observation y ~ N(theta, noise_var)."""
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    precision = 1.0 / noise_var + belief.precision
    variance = 1.0 / precision
    mean = variance * (y / noise_var + belief.mean * belief.precision)
    return GaussianBelief(mean, variance)


def run_filter(
    prior: GaussianBelief, observations: Iterable[float], noise_var: float
) -> list[GaussianBelief]:
    beliefs = []
    belief = prior
    for y in observations:
        belief = filter_step(belief, float(y), noise_var)
        beliefs.append(belief)
    return beliefs


def batch_posterior(
    prior: GaussianBelief, observations: Sequence[float], noise_var: float
) -> GaussianBelief:
    """Posterior after all observations at once; equals the streamed result."""
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    ys = np.asarray(observations, dtype=np.float64)
    precision = prior.precision + ys.size / noise_var
    variance = 1.0 / precision
    return GaussianBelief(
        variance * (prior.mean * prior.precision + ys.sum() / noise_var), variance
    )


@dataclass(frozen=True)
class ChangepointScenario:
    """Two phases of noisy observations with different means.

    Attributes:
        n_first: Observations in the first phase (>= 1)
        mean_first: Mean of the first phase
        n_second: Observations in the second phase (>= 0)
        mean_second: Mean of the second phase
        noise_var: Observation noise variance, also the filter's likelihood
        prior: Belief before any observation

    """

    n_first: int = 110
    mean_first: float = -1.0
    n_second: int = 110
    mean_second: float = 1.0
    noise_var: float = 1.0
    prior: GaussianBelief = GaussianBelief(0.0, 1.0)

    def __post_init__(self):
        if self.n_first < 1 or self.n_second < 0:
            raise ValueError(
                f"Phase counts must be n_first >= 1, n_second >= 0, got "
                f"{self.n_first}, {self.n_second}"
            )
        if self.noise_var <= 0:
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")

    @classmethod
    def balanced(cls) -> "ChangepointScenario":
        return cls(110, -1.0, 110, 1.0)

    @classmethod
    def imbalanced(cls) -> "ChangepointScenario":
        return cls(20, -1.0, 200, 1.0)

    @property
    def expected_final_mean(self) -> float:
        """Mean of the final posterior in expectation over the noise."""
        total = self.n_first * self.mean_first + self.n_second * self.mean_second
        n_total = self.n_first + self.n_second
        precision = self.prior.precision + n_total / self.noise_var
        weighted = self.prior.mean * self.prior.precision + total / self.noise_var
        return weighted / precision


@dataclass(frozen=True)
class Trajectory:
    observations: np.ndarray
    beliefs: tuple[GaussianBelief, ...]

    @property
    def final(self) -> GaussianBelief:
        return self.beliefs[-1]

    @property
    def means(self) -> np.ndarray:
        return np.array([b.mean for b in self.beliefs])

    @property
    def variances(self) -> np.ndarray:
        return np.array([b.variance for b in self.beliefs])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "observation", "post_mean", "post_var"])
            for t, (y, b) in enumerate(
                zip(self.observations, self.beliefs, strict=True), start=1
            ):
                writer.writerow([t, repr(float(y)), repr(b.mean), repr(b.variance)])


def run_changepoint(scenario: ChangepointScenario, seed: int = 0) -> Trajectory:
    """Filter a freshly drawn two-phase stream, one belief per observation."""
    rng = np.random.default_rng(seed)
    scale = np.sqrt(scenario.noise_var)
    observations = np.concatenate(
        [
            rng.normal(scenario.mean_first, scale, size=scenario.n_first),
            rng.normal(scenario.mean_second, scale, size=scenario.n_second),
        ]
    )
    beliefs = run_filter(scenario.prior, observations, scenario.noise_var)
    return Trajectory(observations, tuple(beliefs))


def kalman_bnn_predict(belief: GaussianBelief, dyn: OuDynamics) -> GaussianBelief:
    """Carry a weight's posterior forward one step under the OU drift.

    The carried-over variance is scaled by (1 - reversion)^-2, or by
    (1 - reversion)^2 when ``dyn.conventional`` is set.
    """
    decay = 1.0 - dyn.reversion
    exponent = 2.0 if dyn.conventional else -2.0
    return GaussianBelief(
        decay * belief.mean, dyn.noise_var + decay**exponent * belief.variance
    )


def kalman_bnn_update(
    belief: GaussianBelief,
    x: np.ndarray | float | None,
    y: float,
    slope: float | Callable[[np.ndarray], float],
    noise_var: float,
) -> GaussianBelief:
    """Condition on y ~ N(g(x) * theta, noise_var).

    Args:
        belief: Current belief over the weight
        x: Input the observation was made at
        y: Observation
        slope: g(x) itself, or a callable g evaluated at ``x``, e.g. a partial
            of :func:`linearization_slope`. A zero slope leaves the belief
            unchanged.
        noise_var: Observation noise variance

    """
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    if callable(slope):
        slope = slope(np.asarray(x, dtype=np.float64))
    slope = float(slope)
    precision = slope**2 / noise_var + belief.precision
    variance = 1.0 / precision
    mean = variance * (belief.mean * belief.precision + y * slope / noise_var)
    return GaussianBelief(mean, variance)


def linearization_slope(
    params: ParamVector | np.ndarray, spec: MlpSpec, x: np.ndarray, index: int
) -> float:
    """d f(x; theta) / d theta_index for the first raw output at one input."""
    values = np.asarray(getattr(params, "values", params), dtype=np.float64)
    if not 0 <= index < values.size:
        raise ValueError(f"Parameter index {index} out of range [0, {values.size})")
    point = np.atleast_2d(np.asarray(x, dtype=np.float64))[:1]
    _, grad = ad.value_and_grad(
        lambda theta: ad.index(network_output(theta, spec, point), (0, 0)), values
    )
    return float(grad[index])


def kalman_bnn_filter(
    params: ParamVector | np.ndarray,
    spec: MlpSpec,
    index: int,
    inputs: np.ndarray,
    targets: np.ndarray,
    prior: GaussianBelief,
    dyn: OuDynamics,
    noise_var: float = 1.0,
) -> list[GaussianBelief]:
    """Track one weight of a network over a stream while the others stay fixed.

    Each step predicts under ``dyn``, linearizes the network around the current
    mean and updates on the linearized target ``y - f(x) + g(x) * mean``.
    Before the first observation the prior is used as is.
    """
    values = np.array(getattr(params, "values", params), dtype=np.float64)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    belief = prior
    beliefs = []
    for step, (x, y) in enumerate(zip(inputs, targets, strict=True)):
        if step > 0:
            belief = kalman_bnn_predict(belief, dyn)
        values[index] = belief.mean
        slope = linearization_slope(values, spec, x, index)
        output = float(network_output(values, spec, x[None])[0, 0])
        pseudo = y - output + slope * belief.mean
        belief = kalman_bnn_update(belief, x, pseudo, slope, noise_var)
        beliefs.append(belief)
    return beliefs
