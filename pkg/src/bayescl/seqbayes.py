"""Sequential posterior propagation with HMC and mixture priors.

Task 1 is sampled under an isotropic Gaussian prior. A Gaussian mixture is fitted to
each task's pooled HMC samples and becomes the prior of the next task's sampler.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .errors import ConvergenceGateError
from .gmm import GaussianMixture, GmmConfig, select_components
from .hmc import ChainSet, HmcConfig, run_chains
from .models import (
    IsotropicGaussian,
    LabeledBatch,
    LikelihoodKind,
    LogDensity,
    MlpSpec,
    OutputKind,
    forward,
    log_likelihood,
    log_likelihood_and_grad,
)
from .tasks import AccuracyMatrix, AccuracyRow, Task, TaskStream, accuracy_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PropagationConfig:
    """Pipeline settings around the sampler and the density estimator.

    Attributes:
        prior_precision: Precision tau of the first task's N(0, 1/tau I) prior
        em_samples: Pooled samples are thinned by stride to at most this many
        eval_samples: Posterior samples averaged per predictive evaluation
        min_ess: Smallest admissible pooled ESS over all parameters
        enforce_ess_gate: Abort when the gate fails instead of only logging
        likelihood: Likelihood of the classification head
        noise_var: Observation variance of a Gaussian likelihood
        threads: Worker threads for the chains of one task

    """

    prior_precision: float = 10.0
    em_samples: int = 20000
    eval_samples: int = 500
    min_ess: float = 50.0
    enforce_ess_gate: bool = True
    likelihood: LikelihoodKind = LikelihoodKind.BERNOULLI
    noise_var: float = 1.0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "likelihood", LikelihoodKind(self.likelihood))
        if self.prior_precision <= 0:
            raise ValueError("prior_precision must be positive")
        if self.em_samples < 1 or self.eval_samples < 1:
            raise ValueError("em_samples and eval_samples must be >= 1")


@dataclass(frozen=True)
class PosteriorTarget:
    """log p(D_t | theta) + log prior(theta), with its gradient."""

    spec: MlpSpec
    batch: LabeledBatch
    prior: LogDensity
    kind: LikelihoodKind = LikelihoodKind.BERNOULLI
    noise_var: float = 1.0

    def __post_init__(self):
        if self.prior.dim != self.spec.n_params:
            raise ValueError(
                f"Prior dimension {self.prior.dim} does not match "
                f"{self.spec.n_params} parameters"
            )

    @property
    def dim(self) -> int:
        return self.spec.n_params

    def parts(self, theta: np.ndarray) -> tuple[float, float]:
        """(log-likelihood, prior log-density) at ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        return (
            log_likelihood(theta, self.spec, self.batch, self.kind, self.noise_var),
            float(self.prior.log_density(theta)),
        )

    def log_density(self, theta: np.ndarray) -> float:
        return sum(self.parts(theta))

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=np.float64)
        ll, ll_grad = log_likelihood_and_grad(
            theta, self.spec, self.batch, self.kind, self.noise_var
        )
        if hasattr(self.prior, "value_and_grad"):
            lp, lp_grad = self.prior.value_and_grad(theta)
        else:
            lp = self.prior.log_density(theta)
            lp_grad = self.prior.log_density_grad(theta)
        return float(ll) + float(lp), ll_grad + lp_grad


@dataclass
class TaskRecord:
    task_id: int
    samples: np.ndarray
    mixture: GaussianMixture
    diagnostics: dict
    accuracy: AccuracyRow
    fidelity: tuple[float, float]


@dataclass
class PropagationRun:
    """Per-task results of one sequential run."""

    records: list[TaskRecord] = field(default_factory=list)
    accuracy: AccuracyMatrix = field(default_factory=lambda: AccuracyMatrix(0))

    @property
    def mixtures(self) -> list[GaussianMixture]:
        return [r.mixture for r in self.records]


def thin(samples: np.ndarray, max_samples: int) -> np.ndarray:
    """Keep every k-th row so at most ``max_samples`` remain."""
    n = samples.shape[0]
    if n <= max_samples:
        return samples
    stride = -(-n // max_samples)
    return samples[::stride]


def predictive_probabilities(
    samples: np.ndarray, spec: MlpSpec, x: np.ndarray
) -> np.ndarray:
    """Monte Carlo average of head probabilities over parameter samples."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] < 1:
        raise ValueError("At least one posterior sample is required")
    total = np.zeros((np.atleast_2d(x).shape[0], spec.output_width))
    for theta in samples:
        total += forward(theta, spec, x)
    return total / samples.shape[0]


def predict_from_samples(
    samples: np.ndarray, spec: MlpSpec, x: np.ndarray
) -> np.ndarray:
    probs = predictive_probabilities(samples, spec, x)
    if spec.output is OutputKind.LOGIT:
        return (probs[:, 0] > 0.5).astype(np.int64)
    return np.argmax(probs, axis=1)


def evaluate_samples(
    samples: np.ndarray,
    spec: MlpSpec,
    stream: TaskStream,
    after_task: int | None = None,
    max_samples: int | None = None,
) -> AccuracyRow:
    """Posterior-predictive accuracy on tasks ``0..after_task``.

    Args:
        samples: (S, D) parameter samples, S >= 1
        spec: Network specification
        stream: Task stream providing the test sets
        after_task: Last task to evaluate; defaults to the final task
        max_samples: Samples are thinned by stride to at most this many

    """
    samples = np.atleast_2d(samples)
    if max_samples is not None:
        samples = thin(samples, max_samples)
    after_task = len(stream) - 1 if after_task is None else after_task
    return accuracy_matrix(
        lambda batch: predict_from_samples(samples, spec, batch.inputs),
        stream,
        after_task,
    )


def _task_accuracy(samples: np.ndarray, spec: MlpSpec, task: Task) -> float:
    predicted = predict_from_samples(samples, spec, task.test.inputs)
    return float(np.mean(predicted == task.test.labels))


def fidelity_check(
    mixture: GaussianMixture,
    hmc_samples: np.ndarray,
    spec: MlpSpec,
    current_task: Task,
    n_samples: int = 500,
    seed: int = 0,
) -> tuple[float, float]:
    """Current-task accuracy from HMC samples and from mixture samples.

    Returns:
        ``(acc_hmc, acc_gmm)``; the gap is recorded, not asserted

    """
    hmc_samples = np.atleast_2d(hmc_samples)
    if hmc_samples.shape[0] < 1:
        raise ValueError("hmc_samples must be nonempty")
    hmc_subset = thin(hmc_samples, n_samples)
    gmm_samples = mixture.sample(hmc_subset.shape[0], seed)
    return (
        _task_accuracy(hmc_subset, spec, current_task),
        _task_accuracy(gmm_samples, spec, current_task),
    )


def _check_gate(chains: ChainSet, cfg: PropagationConfig, task_id: int) -> None:
    min_ess = chains.min_ess
    if np.isnan(min_ess):
        logger.warning("Task %d: chains too short for ESS, gate skipped", task_id + 1)
        return
    if min_ess >= cfg.min_ess:
        return
    message = (
        f"Task {task_id + 1}: minimum pooled ESS {min_ess:.1f} below {cfg.min_ess}"
    )
    if cfg.enforce_ess_gate:
        raise ConvergenceGateError(message, chains.diagnostics())
    logger.warning(message)


def _sample_task(
    spec: MlpSpec,
    batch: LabeledBatch,
    prior: LogDensity,
    hmc_cfg: HmcConfig,
    cfg: PropagationConfig,
) -> ChainSet:
    target = PosteriorTarget(spec, batch, prior, cfg.likelihood, cfg.noise_var)
    init = prior.sample(1, np.random.default_rng(hmc_cfg.seed))[0]
    return run_chains(target, init, hmc_cfg, threads=cfg.threads)


def propagate(
    stream: TaskStream,
    spec: MlpSpec,
    hmc_cfg: HmcConfig | None = None,
    gmm_cfg: GmmConfig | None = None,
    cfg: PropagationConfig | None = None,
) -> PropagationRun:
    """Run the sample-fit-propagate loop over every task of ``stream``.

    Raises:
        ConvergenceGateError: If a task's pooled ESS is below ``cfg.min_ess``
            and the gate is enforced

    """
    hmc_cfg = hmc_cfg or HmcConfig()
    gmm_cfg = gmm_cfg or GmmConfig()
    cfg = cfg or PropagationConfig()
    prior: LogDensity = IsotropicGaussian(spec.n_params, cfg.prior_precision)
    run = PropagationRun(accuracy=AccuracyMatrix(len(stream)))

    for t, task in enumerate(stream):
        logger.info("Task %d/%d: sampling posterior", t + 1, len(stream))
        task_cfg = replace(hmc_cfg, seed=hmc_cfg.seed + 1000 * t)
        chains = _sample_task(spec, task.train, prior, task_cfg, cfg)
        _check_gate(chains, cfg, t)

        samples = thin(chains.samples, cfg.em_samples)
        n_components, mixture = select_components(
            samples, gmm_cfg.candidates, gmm_cfg.holdout_frac, task_cfg.seed, gmm_cfg
        )
        row = evaluate_samples(samples, spec, stream, t, cfg.eval_samples)
        run.accuracy.set_row(t, row)
        fidelity = fidelity_check(
            mixture, samples, spec, task, cfg.eval_samples, task_cfg.seed
        )
        diagnostics = chains.diagnostics()
        diagnostics.update(
            {
                "n_components": n_components,
                "em_history": list(mixture.history),
                "fidelity": {"acc_hmc": fidelity[0], "acc_gmm": fidelity[1]},
            }
        )
        logger.info(
            "Task %d: K=%d, mean accuracy %.4f, fidelity hmc=%.4f gmm=%.4f",
            t + 1,
            n_components,
            row.mean,
            *fidelity,
        )
        run.records.append(
            TaskRecord(t, samples, mixture, diagnostics, row, fidelity)
        )
        prior = mixture
    return run


def run_multitask_hmc(
    stream: TaskStream,
    spec: MlpSpec,
    hmc_cfg: HmcConfig | None = None,
    cfg: PropagationConfig | None = None,
) -> tuple[ChainSet, AccuracyRow]:
    """Sample the posterior of all tasks pooled; the multi-task upper bound."""
    hmc_cfg = hmc_cfg or HmcConfig()
    cfg = cfg or PropagationConfig()
    prior = IsotropicGaussian(spec.n_params, cfg.prior_precision)
    chains = _sample_task(spec, stream.pooled().train, prior, hmc_cfg, cfg)
    samples = thin(chains.samples, cfg.em_samples)
    return chains, evaluate_samples(samples, spec, stream, None, cfg.eval_samples)
