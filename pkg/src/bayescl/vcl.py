"""Mean-field variational continual learning.

Each task maximizes an ELBO whose KL term is taken against a frozen copy of the
previous task's posterior. In multi-head mode the network's last layer is
duplicated per task and evaluation uses the head of the task being tested.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import logging

import numpy as np

from . import autodiff as ad
from .baselines import SgdConfig, train_map
from .models import (
    Activation,
    LabeledBatch,
    LikelihoodKind,
    MlpSpec,
    OutputKind,
    default_likelihood,
    forward,
    log_likelihood_graph,
)
from .optim import Adam, minibatches
from .tasks import (
    AccuracyMatrix,
    AccuracyRow,
    Coreset,
    Task,
    TaskStream,
    accuracy,
)

logger = logging.getLogger(__name__)


class HeadMode(Enum):
    SINGLE = "single"
    MULTI = "multi"


@dataclass(frozen=True)
class VclConfig:
    """Variational training settings.

    Attributes:
        hidden: Hidden layer widths
        activation: Hidden nonlinearity
        epochs: Passes over each task
        learning_rate: Adam step size
        batch_size: Minibatch size
        n_mc_train: Reparameterized samples per ELBO estimate
        n_mc_eval: Samples averaged by the predictive at evaluation
        prior_std: Standard deviation of the first task's N(0, std^2) prior
        init_log_std: Initial log standard deviation of new variational factors
        map_epochs: Epochs of point-estimate pretraining for the first means
        coreset_size: Coreset examples per task; 0 disables the coreset variant
        coreset_epochs: Fine-tuning epochs on the coreset before evaluation

    """

    hidden: tuple[int, ...] = (10, 10)
    activation: Activation = Activation.TANH
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    n_mc_train: int = 10
    n_mc_eval: int = 100
    prior_std: float = 1.0
    init_log_std: float = -3.0
    map_epochs: int = 100
    coreset_size: int = 0
    coreset_epochs: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "activation", Activation(self.activation))
        if not self.hidden:
            raise ValueError("At least one hidden layer is required")
        if self.n_mc_train < 1 or self.n_mc_eval < 1:
            raise ValueError("Monte Carlo sample counts must be >= 1")
        if self.prior_std <= 0:
            raise ValueError("prior_std must be positive")

    @classmethod
    def split_mnist(cls) -> "VclConfig":
        return cls(
            hidden=(200, 200),
            activation=Activation.RELU,
            epochs=120,
            batch_size=256,
            map_epochs=10,
        )


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MeanFieldPosterior:
    """Diagonal Gaussian over a shared trunk and one or more heads.

    A task's network parameters are the trunk followed by that task's head, which
    is exactly the flat layout of ``spec``.
    """

    spec: MlpSpec
    trunk_mean: np.ndarray
    trunk_log_std: np.ndarray
    head_means: tuple[np.ndarray, ...]
    head_log_stds: tuple[np.ndarray, ...]

    def __post_init__(self):
        n_head = self.head_size(self.spec)
        if self.trunk_mean.size != self.spec.n_params - n_head:
            raise ValueError("Trunk size does not match the network spec")
        if len(self.head_means) != len(self.head_log_stds):
            raise ValueError("Every head needs a mean and a log-std block")
        object.__setattr__(self, "trunk_mean", _frozen(self.trunk_mean))
        object.__setattr__(self, "trunk_log_std", _frozen(self.trunk_log_std))
        object.__setattr__(self, "head_means", tuple(map(_frozen, self.head_means)))
        object.__setattr__(
            self, "head_log_stds", tuple(map(_frozen, self.head_log_stds))
        )

    @staticmethod
    def head_size(spec: MlpSpec) -> int:
        fan_in, fan_out = spec.layer_shapes[-1]
        return fan_in * fan_out + fan_out

    @classmethod
    def isotropic(
        cls, spec: MlpSpec, std: float = 1.0, n_heads: int = 1
    ) -> "MeanFieldPosterior":
        n_head = cls.head_size(spec)
        n_trunk = spec.n_params - n_head
        log_std = float(np.log(std))
        return cls(
            spec,
            np.zeros(n_trunk),
            np.full(n_trunk, log_std),
            tuple(np.zeros(n_head) for _ in range(n_heads)),
            tuple(np.full(n_head, log_std) for _ in range(n_heads)),
        )

    @property
    def n_heads(self) -> int:
        return len(self.head_means)

    def task_params(self, head: int) -> tuple[np.ndarray, np.ndarray]:
        """(mean, log_std) of one head's full network, in spec layout."""
        return (
            np.concatenate([self.trunk_mean, self.head_means[head]]),
            np.concatenate([self.trunk_log_std, self.head_log_stds[head]]),
        )

    def with_task_params(
        self, head: int, mean: np.ndarray, log_std: np.ndarray
    ) -> "MeanFieldPosterior":
        n_trunk = self.trunk_mean.size
        head_means = list(self.head_means)
        head_log_stds = list(self.head_log_stds)
        head_means[head] = mean[n_trunk:]
        head_log_stds[head] = log_std[n_trunk:]
        return replace(
            self,
            trunk_mean=mean[:n_trunk],
            trunk_log_std=log_std[:n_trunk],
            head_means=tuple(head_means),
            head_log_stds=tuple(head_log_stds),
        )

    def with_new_head(
        self, mean: np.ndarray, log_std: np.ndarray
    ) -> "MeanFieldPosterior":
        return replace(
            self,
            head_means=(*self.head_means, mean),
            head_log_stds=(*self.head_log_stds, log_std),
        )


def kl_diag_gaussian_graph(q_mean, q_log_std, p_mean, p_log_std):
    """Sum of KL(N(q_mean, q_std^2) || N(p_mean, p_std^2)); q may be on a tape."""
    p_var = np.exp(2.0 * np.asarray(p_log_std))
    q_var = ad.exp(2.0 * q_log_std)
    terms = (
        (p_log_std - q_log_std)
        + (q_var + ad.square(q_mean - p_mean)) / (2.0 * p_var)
        - 0.5
    )
    return ad.sum_(terms)


def kl_diag_gaussian(q: MeanFieldPosterior, p: MeanFieldPosterior) -> float:
    """Closed-form KL between two mean-field posteriors over the same blocks."""
    if q.trunk_mean.size != p.trunk_mean.size or q.n_heads != p.n_heads:
        raise ValueError("Posteriors differ in dimension")
    total = float(
        kl_diag_gaussian_graph(
            q.trunk_mean, q.trunk_log_std, p.trunk_mean, p.trunk_log_std
        )
    )
    for h in range(q.n_heads):
        total += float(
            kl_diag_gaussian_graph(
                q.head_means[h],
                q.head_log_stds[h],
                p.head_means[h],
                p.head_log_stds[h],
            )
        )
    return total


def elbo_graph(
    mean,
    log_std,
    prior_mean: np.ndarray,
    prior_log_std: np.ndarray,
    spec: MlpSpec,
    batch: LabeledBatch,
    noise: np.ndarray,
    dataset_size: int,
    kind: LikelihoodKind,
):
    """Reparameterized ELBO of one task's network.

    Args:
        mean: Variational means (array or tape variable)
        log_std: Variational log standard deviations (array or tape variable)
        prior_mean: Means of the frozen prior
        prior_log_std: Log standard deviations of the frozen prior
        spec: Network specification
        batch: Minibatch of the task's data
        noise: (n_mc, D) standard normal draws shared across evaluations
        dataset_size: Task size N; the likelihood term is scaled by N / len(batch)
        kind: Likelihood of the head

    """
    expected = 0.0
    if len(batch):
        std = ad.exp(log_std)
        for eps in noise:
            theta = mean + std * eps
            expected = expected + log_likelihood_graph(theta, spec, batch, kind)
        expected = expected * (dataset_size / (len(batch) * noise.shape[0]))
    return expected - kl_diag_gaussian_graph(mean, log_std, prior_mean, prior_log_std)


def elbo(
    q: MeanFieldPosterior,
    prior: MeanFieldPosterior,
    batch: LabeledBatch,
    n_mc: int,
    dataset_size: int,
    seed: int = 0,
    head: int = 0,
    kind: LikelihoodKind | None = None,
) -> float:
    """Monte Carlo ELBO of one head's network: E_q[log p(D|theta)] - KL(q || prior)."""
    if n_mc < 1:
        raise ValueError(f"n_mc must be >= 1, got {n_mc}")
    mean, log_std = q.task_params(head)
    prior_mean, prior_log_std = prior.task_params(head)
    noise = np.random.default_rng(seed).standard_normal((n_mc, mean.size))
    return float(
        elbo_graph(
            mean,
            log_std,
            prior_mean,
            prior_log_std,
            q.spec,
            batch,
            noise,
            dataset_size,
            kind or default_likelihood(q.spec),
        )
    )


def predictive_probabilities(
    q: MeanFieldPosterior, x: np.ndarray, head: int, n_mc: int, seed: int = 0
) -> np.ndarray:
    """Head probabilities averaged over ``n_mc`` draws from one head's network."""
    mean, log_std = q.task_params(head)
    rng = np.random.default_rng(seed)
    std = np.exp(log_std)
    total = np.zeros((np.atleast_2d(x).shape[0], q.spec.output_width))
    for _ in range(n_mc):
        total += forward(mean + std * rng.standard_normal(mean.size), q.spec, x)
    return total / n_mc


def predict(
    q: MeanFieldPosterior, x: np.ndarray, head: int, n_mc: int, seed: int = 0
) -> np.ndarray:
    probs = predictive_probabilities(q, x, head, n_mc, seed)
    if q.spec.output is OutputKind.LOGIT:
        return (probs[:, 0] > 0.5).astype(np.int64)
    return np.argmax(probs, axis=1)


def _local_labels(task: Task, batch: LabeledBatch, mode: HeadMode) -> LabeledBatch:
    """Labels as seen by the head: per-task indices for multi-head nets."""
    if mode is HeadMode.SINGLE:
        return batch
    lookup = {c: i for i, c in enumerate(task.classes)}
    labels = np.array([lookup[int(y)] for y in batch.labels], dtype=np.int64)
    return LabeledBatch(batch.inputs, labels, batch.task_id)


def vcl_spec(stream: TaskStream, cfg: VclConfig, mode: HeadMode) -> MlpSpec:
    """Network for a stream: Bernoulli heads for two-way problems."""
    if mode is HeadMode.MULTI:
        n_out = max(len(t.classes) for t in stream.tasks)
    else:
        n_out = stream.n_classes
    widths = (stream.input_width, *cfg.hidden, 1 if n_out <= 2 else n_out)
    output = OutputKind.LOGIT if n_out <= 2 else OutputKind.LOGITS
    return MlpSpec(widths, cfg.activation, output)


def fit_task(
    q: MeanFieldPosterior,
    prior: MeanFieldPosterior,
    batch: LabeledBatch,
    head: int,
    epochs: int,
    cfg: VclConfig,
    rng: np.random.Generator,
) -> MeanFieldPosterior:
    """Maximize one head's ELBO by Adam; other heads are left untouched."""
    if len(batch) == 0 or epochs == 0:
        return q
    kind = default_likelihood(q.spec)
    mean, log_std = q.task_params(head)
    prior_mean, prior_log_std = prior.task_params(head)
    n = mean.size
    params = np.concatenate([mean, log_std])
    optimizer = Adam(cfg.learning_rate)
    for epoch in range(epochs):
        total = 0.0
        for idx in minibatches(len(batch), cfg.batch_size, rng):
            sub = batch.subset(idx)
            noise = rng.standard_normal((cfg.n_mc_train, n))
            value, grad = ad.value_and_grad(
                lambda m, s, sub=sub, noise=noise: elbo_graph(
                    m,
                    s,
                    prior_mean,
                    prior_log_std,
                    q.spec,
                    sub,
                    noise,
                    len(batch),
                    kind,
                ),
                (params[:n], params[n:]),
            )
            params = optimizer.step(params, -grad / len(batch))
            total += value
        if (epoch + 1) % 10 == 0:
            logger.debug("VCL epoch %d/%d: ELBO %.4f", epoch + 1, epochs, total)
    return q.with_task_params(head, params[:n], params[n:])


@dataclass
class VclRun:
    accuracy: AccuracyMatrix
    posteriors: list[MeanFieldPosterior] = field(default_factory=list)
    mode: HeadMode = HeadMode.SINGLE


def _initial_head(spec: MlpSpec, cfg: VclConfig, rng: np.random.Generator):
    size = MeanFieldPosterior.head_size(spec)
    fan_in = spec.layer_shapes[-1][0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size), np.full(size, cfg.init_log_std)


def train_vcl(
    stream: TaskStream,
    cfg: VclConfig | None = None,
    head_mode: HeadMode | str = HeadMode.SINGLE,
    seed: int = 0,
) -> VclRun:
    """Run variational continual learning over ``stream``.

    Multi-head mode adds a head per task and needs the task identity at test
    time. With ``cfg.coreset_size > 0`` the coreset rows are held out of the
    propagated posterior's training data and a copy of that posterior is
    fine-tuned on the coreset before each evaluation.
    """
    cfg = cfg or VclConfig()
    mode = HeadMode(head_mode)
    spec = vcl_spec(stream, cfg, mode)
    rng = np.random.default_rng(seed)
    head_size = MeanFieldPosterior.head_size(spec)
    prior = MeanFieldPosterior.isotropic(spec, cfg.prior_std)
    run = VclRun(AccuracyMatrix(len(stream)), mode=mode)
    coreset = Coreset(cfg.coreset_size)
    q: MeanFieldPosterior | None = None

    for t, task in enumerate(stream):
        head = t if mode is HeadMode.MULTI else 0
        train = _local_labels(task, task.train, mode)
        if cfg.coreset_size:
            coreset.add_task(t, train, rng)
            train = train.subset(_complement(len(train), coreset.indices[t]))

        if q is None:
            map_cfg = SgdConfig(
                learning_rate=cfg.learning_rate * 10,
                epochs=cfg.map_epochs,
                batch_size=cfg.batch_size,
            )
            map_params = train_map(spec, train, map_cfg, seed=seed)
            q = MeanFieldPosterior.isotropic(spec).with_task_params(
                0, map_params.values, np.full(spec.n_params, cfg.init_log_std)
            )
        elif mode is HeadMode.MULTI:
            q = q.with_new_head(*_initial_head(spec, cfg, rng))
            prior = prior.with_new_head(
                np.zeros(head_size), np.full(head_size, np.log(cfg.prior_std))
            )

        q = fit_task(q, prior, train, head, cfg.epochs, cfg, rng)
        run.posteriors.append(q)

        evaluated = _finetune_on_coreset(q, coreset, t, mode, cfg, rng)
        accs = []
        for i, seen in enumerate(stream.tasks[: t + 1]):
            test = _local_labels(seen, seen.test, mode)
            eval_head = i if mode is HeadMode.MULTI else 0
            predicted = predict(
                evaluated, test.inputs, eval_head, cfg.n_mc_eval, seed + i
            )
            accs.append(accuracy(predicted, test.labels))
        row = AccuracyRow(tuple(accs))
        run.accuracy.set_row(t, row)
        logger.info(
            "VCL (%s) after task %d: mean accuracy %.4f", mode.value, t + 1, row.mean
        )
        # The posterior after task t is the prior of task t + 1.
        prior = q
    return run


def _complement(n: int, indices: np.ndarray) -> np.ndarray:
    keep = np.ones(n, dtype=bool)
    keep[indices] = False
    return np.flatnonzero(keep)


def _finetune_on_coreset(
    q: MeanFieldPosterior,
    coreset: Coreset,
    after_task: int,
    mode: HeadMode,
    cfg: VclConfig,
    rng: np.random.Generator,
) -> MeanFieldPosterior:
    """Fine-tune a copy of ``q`` on each stored task's coreset in turn."""
    if not cfg.coreset_size:
        return q
    tuned = q
    for task_id, members in sorted(coreset.members.items()):
        if task_id > after_task:
            continue
        head = task_id if mode is HeadMode.MULTI else 0
        tuned = fit_task(tuned, q, members, head, cfg.coreset_epochs, cfg, rng)
    return tuned
