"""Prototype-based Bayesian continual learning.

Classes are Gaussian prototypes in the embedding space of a trained MLP. Class
frequencies follow a Dirichlet-categorical model and prototype means a
Gaussian-Gaussian model with fixed diagonal embedding noise, so both posteriors
update in closed form. The embedder is trained by maximizing the posterior
predictive of its embeddings; a small per-task coreset is replayed.
"""

from dataclasses import dataclass, field, replace
import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .models import LabeledBatch, MlpSpec, ParamVector, network_output
from .optim import Adam, minibatches
from .serialization import decode_array, encode_array
from .tasks import AccuracyMatrix, Coreset, Task, TaskStream, accuracy_matrix

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ProtoClConfig:
    """Defaults follow the split-benchmark setup.

    Attributes:
        n_classes: Maximum number of classes J
        embedding_dim: Embedding width E
        hidden: Hidden width of the embedder
        alpha_init: Initial Dirichlet concentration of every class
        noise_var: Diagonal embedding noise variance
        learning_rate: Adam learning rate
        epochs: Passes over each task's data (plus coreset)
        batch_size: Minibatch size
        coreset_size: Examples retained per task
        learn_alpha: Also follow the objective's gradient in log alpha

    """

    n_classes: int = 10
    embedding_dim: int = 128
    hidden: int = 200
    alpha_init: float = 0.7
    noise_var: float = 0.05
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 128
    coreset_size: int = 200
    learn_alpha: bool = True

    def __post_init__(self):
        if self.n_classes < 1 or self.embedding_dim < 1:
            raise ValueError("n_classes and embedding_dim must be >= 1")
        if self.alpha_init <= 0 or self.noise_var <= 0:
            raise ValueError("alpha_init and noise_var must be positive")
        if self.epochs < 0 or self.coreset_size < 0:
            raise ValueError("epochs and coreset_size must be >= 0")


@dataclass(frozen=True)
class ProtoState:
    """Conjugate posterior over class frequencies and prototypes.

    Attributes:
        log_alpha: (J,) log Dirichlet concentrations
        means: (J, E) prototype means
        precisions: (J, E) diagonal prototype precisions
        noise_var: (E,) diagonal embedding noise variances
        active: (J,) classes seen so far

    """

    log_alpha: np.ndarray
    means: np.ndarray
    precisions: np.ndarray
    noise_var: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        j, e = self.means.shape
        if self.log_alpha.shape != (j,) or self.precisions.shape != (j, e):
            raise ValueError("Inconsistent prototype state shapes")
        if self.noise_var.shape != (e,) or self.active.shape != (j,):
            raise ValueError("Inconsistent prototype state shapes")
        if np.any(self.precisions <= 0) or np.any(self.noise_var <= 0):
            raise ValueError("Precisions and noise variances must be positive")

    @classmethod
    def initial(
        cls, n_classes: int, embedding_dim: int, alpha_init: float, noise_var: float
    ) -> "ProtoState":
        return cls(
            log_alpha=np.full(n_classes, math.log(alpha_init)),
            means=np.zeros((n_classes, embedding_dim)),
            precisions=np.ones((n_classes, embedding_dim)),
            noise_var=np.full(embedding_dim, noise_var),
            active=np.zeros(n_classes, dtype=bool),
        )

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.means.shape[1]

    def activate(self, classes, rng: np.random.Generator) -> "ProtoState":
        """Create prototype rows for unseen classes: mean 0, precision exp(N(0,1))."""
        classes = np.asarray(sorted(set(int(c) for c in classes)), dtype=np.int64)
        _check_classes(classes, self.n_classes)
        new = classes[~self.active[classes]]
        if new.size == 0:
            return self
        means = self.means.copy()
        precisions = self.precisions.copy()
        active = self.active.copy()
        means[new] = 0.0
        precisions[new] = np.exp(rng.standard_normal((new.size, self.embedding_dim)))
        active[new] = True
        return replace(self, means=means, precisions=precisions, active=active)

    def to_dict(self) -> dict:
        return {
            "alpha": encode_array(self.alpha),
            "means": encode_array(self.means),
            "precisions": encode_array(self.precisions),
            "noise_var": encode_array(self.noise_var),
            "active": [bool(a) for a in self.active],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProtoState":
        return cls(
            log_alpha=np.log(decode_array(data["alpha"])),
            means=decode_array(data["means"]),
            precisions=decode_array(data["precisions"]),
            noise_var=decode_array(data["noise_var"]),
            active=np.array(data["active"], dtype=bool),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ProtoState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_classes(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(
            f"Class labels must lie in [0, {n_classes}), got "
            f"[{labels.min()}, {labels.max()}]"
        )


def update_dirichlet(alpha: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """alpha_j + number of labels equal to j."""
    alpha = np.asarray(alpha, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    _check_classes(labels, alpha.size)
    return alpha + np.bincount(labels, minlength=alpha.size)


def update_prototypes(
    state: ProtoState, z: np.ndarray, labels: np.ndarray
) -> ProtoState:
    """Gaussian-Gaussian update of every observed class's prototype.

    Lambda' = Lambda + N_y / noise_var and
    Lambda' mu' = N_y zbar_y / noise_var + Lambda mu. Unobserved classes keep
    their rows.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if z.shape[0] != labels.size:
        raise ValueError(f"{z.shape[0]} embeddings but {labels.size} labels")
    if labels.size and z.shape[1] != state.embedding_dim:
        raise ValueError(
            f"Embedding width {z.shape[1]} differs from {state.embedding_dim}"
        )
    _check_classes(labels, state.n_classes)
    means = state.means.copy()
    precisions = state.precisions.copy()
    active = state.active.copy()
    noise_precision = 1.0 / state.noise_var
    for y in np.unique(labels):
        rows = z[labels == y]
        count = rows.shape[0]
        new_precision = precisions[y] + count * noise_precision
        means[y] = (
            count * noise_precision * rows.mean(axis=0) + precisions[y] * means[y]
        ) / new_precision
        precisions[y] = new_precision
        active[y] = True
    return replace(state, means=means, precisions=precisions, active=active)


def conjugate_update(
    state: ProtoState, z: np.ndarray, labels: np.ndarray
) -> ProtoState:
    """Dirichlet and prototype updates for one batch of embeddings."""
    state = update_prototypes(state, z, labels)
    return replace(state, log_alpha=np.log(update_dirichlet(state.alpha, labels)))


def _active_index(state: ProtoState) -> np.ndarray:
    active = np.flatnonzero(state.active)
    if active.size == 0:
        raise ValueError("No active classes in the prototype state")
    return active


def log_posterior_predictive_graph(
    z, labels: np.ndarray, state: ProtoState, log_alpha
):
    """Sum over points of log p(y_i) + log N(z_i; mu_y, noise_var + 1/Lambda_y).

    ``z`` and ``log_alpha`` may be tape variables; class probabilities are
    normalized over active classes.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n = labels.size
    if n == 0:
        return 0.0
    active = _active_index(state)
    if not np.all(state.active[labels]):
        raise ValueError("Labels reference inactive classes")
    variance = state.noise_var + 1.0 / state.precisions[labels]
    class_term = ad.sum_(ad.index(log_alpha, labels)) - n * ad.logsumexp(
        ad.index(log_alpha, active)
    )
    diff = z - state.means[labels]
    gaussian = -0.5 * ad.sum_(ad.square(diff) * (1.0 / variance)) - 0.5 * float(
        np.sum(np.log(variance)) + n * state.embedding_dim * _LOG_2PI
    )
    return class_term + gaussian


def log_posterior_predictive(
    z: np.ndarray, labels: np.ndarray, state: ProtoState
) -> float:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return float(log_posterior_predictive_graph(z, labels, state, state.log_alpha))


def log_joint(z: np.ndarray, state: ProtoState) -> np.ndarray:
    """(n, J) log p(y = j, z); inactive classes are -inf."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    active = _active_index(state)
    out = np.full((z.shape[0], state.n_classes), -np.inf)
    log_prior = state.log_alpha[active] - logsumexp(state.log_alpha[active])
    for k, j in enumerate(active):
        variance = state.noise_var + 1.0 / state.precisions[j]
        out[:, j] = log_prior[k] - 0.5 * (
            np.sum(np.log(variance))
            + state.embedding_dim * _LOG_2PI
            + np.sum((z - state.means[j]) ** 2 / variance, axis=1)
        )
    return out


def predict(z: np.ndarray, state: ProtoState) -> np.ndarray:
    """Normalized posterior-predictive class probabilities, shape (n, J)."""
    joint = log_joint(z, state)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def objective_and_grad(
    theta: np.ndarray,
    log_alpha: np.ndarray,
    spec: MlpSpec,
    batch: LabeledBatch,
    state: ProtoState,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative mean log posterior predictive with gradients in theta and log alpha."""
    def graph(theta_var, log_alpha_var):
        z = network_output(theta_var, spec, batch.inputs)
        lpp = log_posterior_predictive_graph(z, batch.labels, state, log_alpha_var)
        return -lpp / len(batch)

    value, tape = ad.evaluate(graph, (theta, log_alpha))
    grads = ad.backward(tape).per_input
    return value, grads[0], grads[1]


@dataclass
class ProtoClLearner:
    """Embedder, prototype posterior and coreset carried across tasks."""

    spec: MlpSpec
    embedder: ParamVector
    state: ProtoState
    coreset: Coreset
    alpha_history: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(
        cls, input_width: int, cfg: ProtoClConfig, seed: int = 0
    ) -> "ProtoClLearner":
        spec = MlpSpec.embedder(cfg.embedding_dim, input_width, cfg.hidden)
        rng = np.random.default_rng(seed)
        return cls(
            spec=spec,
            embedder=ParamVector.initialize(spec, rng),
            state=ProtoState.initial(
                cfg.n_classes, cfg.embedding_dim, cfg.alpha_init, cfg.noise_var
            ),
            coreset=Coreset(cfg.coreset_size),
        )

    def embed(self, x: np.ndarray) -> np.ndarray:
        return network_output(self.embedder.values, self.spec, x)

    def predict_labels(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(log_joint(self.embed(x), self.state), axis=1)


def _keep_mass(
    log_alpha: np.ndarray, reference: np.ndarray, active: np.ndarray
) -> np.ndarray:
    """Shift active log concentrations so their total matches ``reference``.

    The gradient step only redistributes mass between classes; the total stays
    the number of points seen plus the initial concentrations.
    """
    shifted = log_alpha.copy()
    shifted[active] += logsumexp(reference[active]) - logsumexp(log_alpha[active])
    return shifted


def train_task(
    spec: MlpSpec,
    embedder: ParamVector,
    state: ProtoState,
    task: Task,
    coreset: Coreset,
    cfg: ProtoClConfig,
    rng: np.random.Generator,
) -> tuple[ParamVector, ProtoState, Coreset]:
    """Train on one task plus the coreset, then grow the coreset.

    Every minibatch takes one Adam step on the embedder (and log alpha), then
    applies the conjugate updates with the new embeddings.

    Raises:
        ValueError: If a task class is outside ``[0, cfg.n_classes)``

    """
    _check_classes(np.asarray(task.classes, dtype=np.int64), state.n_classes)
    replay = coreset.batch()
    if replay is None:
        data = task.train
    else:
        data = LabeledBatch.concatenate([task.train, replay])
    theta = embedder.values.copy()
    log_alpha = state.log_alpha.copy()
    optimizer = Adam(cfg.learning_rate)
    n_alpha = log_alpha.size

    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in minibatches(len(data), cfg.batch_size, rng):
            batch = data.subset(idx)
            state = state.activate(np.unique(batch.labels), rng)
            state = replace(state, log_alpha=log_alpha)
            value, g_theta, g_alpha = objective_and_grad(
                theta, log_alpha, spec, batch, state
            )
            if not cfg.learn_alpha:
                g_alpha = np.zeros(n_alpha)
            updated = optimizer.step(
                np.concatenate([theta, log_alpha]), np.concatenate([g_theta, g_alpha])
            )
            theta, stepped = updated[:-n_alpha], updated[-n_alpha:]
            if cfg.learn_alpha:
                stepped = _keep_mass(stepped, log_alpha, state.active)
            log_alpha = stepped
            state = replace(state, log_alpha=log_alpha)
            z = network_output(theta, spec, batch.inputs)
            state = conjugate_update(state, z, batch.labels)
            log_alpha = state.log_alpha
            total += value * len(batch)
        logger.debug(
            "task %d epoch %d: objective %.6f",
            task.task_id + 1,
            epoch + 1,
            total / max(len(data), 1),
        )

    grown = coreset.copy()
    grown.add_task(task.task_id, task.train, rng)
    return ParamVector(theta, spec), state, grown


@dataclass
class ProtoClRun:
    accuracy: AccuracyMatrix
    alpha_history: list[np.ndarray]
    learner: ProtoClLearner


def run_protocl(
    stream: TaskStream, cfg: ProtoClConfig | None = None, seed: int = 0
) -> ProtoClRun:
    """Train task after task, evaluating every seen task after each one."""
    cfg = cfg or ProtoClConfig()
    learner = ProtoClLearner.create(stream.input_width, cfg, seed)
    rng = np.random.default_rng(seed + 1)
    matrix = AccuracyMatrix(len(stream))
    for t, task in enumerate(stream):
        learner.embedder, learner.state, learner.coreset = train_task(
            learner.spec,
            learner.embedder,
            learner.state,
            task,
            learner.coreset,
            cfg,
            rng,
        )
        learner.alpha_history.append(learner.state.alpha.copy())
        row = accuracy_matrix(
            lambda batch: learner.predict_labels(batch.inputs), stream, t
        )
        matrix.set_row(t, row)
        logger.info("After task %d: mean accuracy %.4f", t + 1, row.mean)
    return ProtoClRun(matrix, learner.alpha_history, learner)
