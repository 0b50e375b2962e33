"""Deterministic networks trained by gradient descent.

``train_map`` fits point estimates (maximum likelihood, or MAP under a prior) and
is reused to initialize variational means. The sequential and pooled runners are
the single-head fine-tuning and multi-task baselines.
"""

from dataclasses import dataclass
import logging

import numpy as np

from . import autodiff as ad
from .models import (
    LabeledBatch,
    LikelihoodKind,
    MlpSpec,
    ParamVector,
    default_likelihood,
    log_likelihood_graph,
    predict_labels,
)
from .optim import Adam, minibatches
from .tasks import AccuracyMatrix, AccuracyRow, TaskStream, accuracy_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    """Adam settings for point-estimate training.

    Attributes:
        learning_rate: Adam step size
        epochs: Passes over each task
        batch_size: Minibatch size
        prior_precision: Weight decay as an isotropic Gaussian prior; 0 disables

    """

    learning_rate: float = 1e-2
    epochs: int = 300
    batch_size: int = 64
    prior_precision: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.prior_precision < 0:
            raise ValueError("prior_precision must be >= 0")


def _objective(theta, spec, batch, kind, n_total, prior_precision):
    """Negative log posterior per training point, estimated on a minibatch."""
    value = (n_total / len(batch)) * log_likelihood_graph(theta, spec, batch, kind)
    if prior_precision > 0:
        value = value - 0.5 * prior_precision * ad.sum_(ad.square(theta))
    return -value / n_total


def train_map(
    spec: MlpSpec,
    batch: LabeledBatch,
    cfg: SgdConfig | None = None,
    init: ParamVector | None = None,
    seed: int = 0,
    kind: LikelihoodKind | None = None,
) -> ParamVector:
    """Fit a point estimate by minibatch Adam on the negative log posterior.

    Args:
        spec: Network specification
        batch: Training data
        cfg: Optimizer settings
        init: Starting parameters; fan-in initialization when omitted
        seed: Seed for initialization and shuffling
        kind: Likelihood; inferred from the head when omitted

    Returns:
        The trained parameters

    """
    cfg = cfg or SgdConfig()
    kind = kind or default_likelihood(spec)
    rng = np.random.default_rng(seed)
    params = init if init is not None else ParamVector.initialize(spec, rng)
    if len(batch) == 0 or cfg.epochs == 0:
        return params
    theta = params.values.copy()
    optimizer = Adam(cfg.learning_rate)
    for epoch in range(cfg.epochs):
        for idx in minibatches(len(batch), cfg.batch_size, rng):
            _, grad = ad.value_and_grad(
                lambda t, sub=batch.subset(idx): _objective(
                    t, spec, sub, kind, len(batch), cfg.prior_precision
                ),
                theta,
            )
            theta = optimizer.step(theta, grad)
        if (epoch + 1) % 50 == 0:
            logger.debug("MAP training epoch %d/%d", epoch + 1, cfg.epochs)
    return ParamVector(theta, spec)


def run_sgd_sequential(
    stream: TaskStream, spec: MlpSpec, cfg: SgdConfig | None = None, seed: int = 0
) -> AccuracyMatrix:
    """Fine-tune one single-headed network task after task."""
    cfg = cfg or SgdConfig()
    matrix = AccuracyMatrix(len(stream))
    params = ParamVector.initialize(spec, np.random.default_rng(seed))
    for t, task in enumerate(stream):
        params = train_map(spec, task.train, cfg, init=params, seed=seed + t + 1)
        row = accuracy_matrix(
            lambda b, p=params: predict_labels(p, spec, b.inputs), stream, t
        )
        matrix.set_row(t, row)
        logger.info("SGD after task %d: mean accuracy %.4f", t + 1, row.mean)
    return matrix


def run_sgd_multitask(
    stream: TaskStream, spec: MlpSpec, cfg: SgdConfig | None = None, seed: int = 0
) -> AccuracyRow:
    """Train once on every task pooled and evaluate each task."""
    params = train_map(spec, stream.pooled().train, cfg, seed=seed)
    return accuracy_matrix(
        lambda b: predict_labels(params, spec, b.inputs), stream, len(stream) - 1
    )
