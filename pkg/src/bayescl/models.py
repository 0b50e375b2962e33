"""Network families, likelihoods and log-posteriors.

Two MLP families are used throughout: the small tanh BNN of the toy streams
(``[2, 10, 10, 1]``) and the ``784-200-200-E`` embedder / classifier of the split
benchmarks. Parameters are always handled as one flat float64 vector; the graph
functions in this module accept either a numpy array or an autodiff ``Var`` for
that vector, so the same code computes values and tape gradients.
"""

from dataclasses import dataclass
from enum import Enum
import math
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import autodiff as ad
from .serialization import PARAMS_MAGIC, read_float_block, write_float_block


class Activation(Enum):
    """Hidden-layer nonlinearity."""

    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


class OutputKind(Enum):
    """How the final layer is interpreted."""

    LOGIT = "logit"  # single Bernoulli logit
    LOGITS = "logits"  # K-way categorical logits
    EMBEDDING = "embedding"  # raw embedding / regression output


class LikelihoodKind(Enum):
    BERNOULLI = "bernoulli"
    CATEGORICAL = "categorical"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and head semantics of a fully connected network.

    Attributes:
        widths: Input width, hidden widths, output width
        activation: Nonlinearity applied after every hidden layer
        output: Interpretation of the output layer

    """

    widths: tuple[int, ...]
    activation: Activation = Activation.TANH
    output: OutputKind = OutputKind.LOGIT

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 3:
            raise ValueError(
                f"An MLP needs at least one hidden layer, got widths {widths}"
            )
        if any(w <= 0 for w in widths):
            raise ValueError(f"Layer widths must be positive, got {widths}")
        if self.output is OutputKind.LOGIT and widths[-1] != 1:
            raise ValueError("A logit head must have output width 1")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "output", OutputKind(self.output))

    @classmethod
    def toy_bnn(cls) -> "MlpSpec":
        return cls((2, 10, 10, 1), Activation.TANH, OutputKind.LOGIT)

    @classmethod
    def embedder(
        cls, embedding_dim: int = 128, input_width: int = 784, hidden: int = 200
    ) -> "MlpSpec":
        return cls(
            (input_width, hidden, hidden, embedding_dim),
            Activation.RELU,
            OutputKind.EMBEDDING,
        )

    @classmethod
    def classifier(
        cls, n_classes: int, input_width: int = 784, hidden: int = 200
    ) -> "MlpSpec":
        if n_classes == 1:
            return cls((input_width, hidden, hidden, 1), Activation.RELU)
        return cls(
            (input_width, hidden, hidden, n_classes),
            Activation.RELU,
            OutputKind.LOGITS,
        )

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.widths[:-1], self.widths[1:], strict=True))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activation": self.activation.value,
            "output": self.output.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSpec":
        return cls(
            tuple(data["widths"]),
            Activation(data.get("activation", "tanh")),
            OutputKind(data.get("output", "logit")),
        )


@dataclass(frozen=True)
class ParamVector:
    """Immutable flat parameter vector tied to its network spec."""

    values: np.ndarray
    spec: MlpSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.spec.n_params:
            raise ValueError(
                f"Parameter count {values.size} does not match spec "
                f"({self.spec.n_params})"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "ParamVector":
        return cls(np.zeros(spec.n_params), spec)

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> "ParamVector":
        """Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        chunks = []
        for fan_in, fan_out in spec.layer_shapes:
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(np.concatenate(chunks), spec)

    @classmethod
    def from_layers(
        cls, spec: MlpSpec, layers: list[tuple[np.ndarray, np.ndarray]]
    ) -> "ParamVector":
        chunks = []
        for (w, b), (fan_in, fan_out) in zip(layers, spec.layer_shapes, strict=True):
            chunks.append(np.asarray(w, dtype=np.float64).reshape(fan_in * fan_out))
            chunks.append(np.asarray(b, dtype=np.float64).reshape(fan_out))
        return cls(np.concatenate(chunks), spec)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.values, self.spec)

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.spec)


@dataclass(frozen=True)
class LabeledBatch:
    """Inputs with integer class labels (or real targets for regression).

    Attributes:
        inputs: (n, d) matrix
        labels: (n,) labels; integers for classification
        task_id: Optional identifier of the task the batch belongs to

    """

    inputs: np.ndarray
    labels: np.ndarray
    task_id: int | None = None

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        labels = np.asarray(self.labels).ravel()
        if inputs.shape[0] != labels.shape[0]:
            raise ValueError(
                f"{inputs.shape[0]} inputs but {labels.shape[0]} labels in batch"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def empty(cls, input_width: int, task_id: int | None = None) -> "LabeledBatch":
        return cls(np.zeros((0, input_width)), np.zeros(0, dtype=np.int64), task_id)

    def subset(self, indices: np.ndarray) -> "LabeledBatch":
        return LabeledBatch(
            self.inputs[indices].copy(), self.labels[indices].copy(), self.task_id
        )

    def copy(self) -> "LabeledBatch":
        return LabeledBatch(self.inputs.copy(), self.labels.copy(), self.task_id)

    @classmethod
    def concatenate(cls, batches: list["LabeledBatch"]) -> "LabeledBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            raise ValueError("Cannot concatenate an empty list of batches")
        return cls(
            np.concatenate([b.inputs for b in batches]),
            np.concatenate([b.labels for b in batches]),
        )


@runtime_checkable
class LogDensity(Protocol):
    """A normalized, differentiable density over parameter vectors."""

    @property
    def dim(self) -> int: ...

    def log_density(self, x: np.ndarray) -> float: ...

    def log_density_grad(self, x: np.ndarray) -> np.ndarray: ...

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class IsotropicGaussian:
    """N(0, precision^-1 I); the task-1 prior of the weight-space pipeline."""

    dimension: int
    precision: float = 10.0

    @property
    def dim(self) -> int:
        return self.dimension

    def log_density(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(
            -0.5 * self.precision * np.dot(x, x)
            + 0.5 * self.dimension * math.log(self.precision / (2.0 * math.pi))
        )

    def log_density_grad(self, x: np.ndarray) -> np.ndarray:
        return -self.precision * np.asarray(x, dtype=np.float64)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        scale = 1.0 / math.sqrt(self.precision)
        return rng.normal(0.0, scale, size=(n, self.dimension))


def unflatten(theta, spec: MlpSpec) -> list:
    """Split a flat vector (array or Var) into per-layer (W, b) pairs."""
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        flat_w = ad.index(theta, slice(offset, offset + fan_in * fan_out))
        w = ad.reshape(flat_w, (fan_in, fan_out))
        offset += fan_in * fan_out
        b = ad.index(theta, slice(offset, offset + fan_out))
        offset += fan_out
        layers.append((w, b))
    return layers


def _activate(h, activation: Activation):
    if activation is Activation.TANH:
        return ad.tanh(h)
    if activation is Activation.RELU:
        return ad.relu(h)
    return h


def _check_inputs(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.input_width:
        raise ValueError(
            f"Input has {x.shape[1]} columns, spec expects {spec.input_width}"
        )
    return x


def network_output(theta, spec: MlpSpec, x: np.ndarray):
    """Pre-head outputs (logits or embeddings) of the network."""
    h = _check_inputs(spec, x)
    layers = unflatten(theta, spec)
    for i, (w, b) in enumerate(layers):
        h = ad.bias_add(ad.matmul(h, w), b)
        if i < len(layers) - 1:
            h = _activate(h, spec.activation)
    return h


def _values(params) -> np.ndarray:
    return params.values if isinstance(params, ParamVector) else np.asarray(params)


def forward(
    params: ParamVector | np.ndarray, spec: MlpSpec, x: np.ndarray, raw: bool = False
) -> np.ndarray:
    """Evaluate the network on an (n, d) input matrix.

    Args:
        params: Flat parameters
        spec: Network specification
        x: Inputs; a 1-D vector is treated as a single row
        raw: Return pre-head outputs instead of head probabilities

    Returns:
        (n, out) matrix: sigmoid probabilities for a logit head, softmax
        probabilities for a K-way head, raw outputs for embeddings or ``raw=True``

    Raises:
        ValueError: On input width mismatch

    """
    out = network_output(_values(params), spec, x)
    if raw or spec.output is OutputKind.EMBEDDING:
        return out
    if spec.output is OutputKind.LOGIT:
        return ad.sigmoid(out)
    return ad.softmax(out, axis=1)


def predict_labels(
    params: ParamVector | np.ndarray, spec: MlpSpec, x: np.ndarray
) -> np.ndarray:
    probs = forward(params, spec, x)
    if spec.output is OutputKind.LOGIT:
        return (probs[:, 0] > 0.5).astype(np.int64)
    return np.argmax(probs, axis=1)


def _check_kind(spec: MlpSpec, kind: LikelihoodKind) -> None:
    if kind is LikelihoodKind.CATEGORICAL:
        if spec.output_width < 2:
            raise ValueError("Categorical likelihood needs at least two outputs")
    elif spec.output_width != 1:
        raise ValueError(f"{kind.value} likelihood needs a single output")


def log_likelihood_graph(
    theta,
    spec: MlpSpec,
    batch: LabeledBatch,
    kind: LikelihoodKind,
    noise_var: float = 1.0,
):
    """Sum over the batch of log p(y | x, theta), tape-compatible."""
    kind = LikelihoodKind(kind)
    _check_kind(spec, kind)
    n = len(batch)
    if n == 0:
        return 0.0
    out = network_output(theta, spec, batch.inputs)
    if kind is LikelihoodKind.BERNOULLI:
        logits = ad.index(out, (slice(None), 0))
        y = batch.labels.astype(np.float64)
        terms = y * ad.log_sigmoid(logits) + (1.0 - y) * ad.log_sigmoid(-logits)
        return ad.sum_(terms)
    if kind is LikelihoodKind.CATEGORICAL:
        labels = batch.labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= spec.output_width:
            raise ValueError(
                f"Labels must lie in [0, {spec.output_width}), got "
                f"[{labels.min()}, {labels.max()}]"
            )
        log_probs = ad.log_softmax(out, axis=1)
        return ad.sum_(ad.index(log_probs, (np.arange(n), labels)))
    residual = ad.index(out, (slice(None), 0)) - batch.labels.astype(np.float64)
    return -0.5 * ad.sum_(ad.square(residual)) / noise_var - 0.5 * n * math.log(
        2.0 * math.pi * noise_var
    )


def log_likelihood(
    params: ParamVector | np.ndarray,
    spec: MlpSpec,
    batch: LabeledBatch,
    kind: LikelihoodKind = LikelihoodKind.BERNOULLI,
    noise_var: float = 1.0,
) -> float:
    return float(log_likelihood_graph(_values(params), spec, batch, kind, noise_var))


def log_posterior(
    params: ParamVector | np.ndarray,
    spec: MlpSpec,
    batch: LabeledBatch,
    prior: LogDensity,
    kind: LikelihoodKind = LikelihoodKind.BERNOULLI,
    noise_var: float = 1.0,
) -> float:
    """Unnormalized log posterior: log-likelihood plus prior log-density.

    Raises:
        ValueError: If the prior dimension differs from the parameter count

    """
    if prior.dim != spec.n_params:
        raise ValueError(
            f"Prior dimension {prior.dim} does not match {spec.n_params} parameters"
        )
    values = _values(params)
    return log_likelihood(values, spec, batch, kind, noise_var) + prior.log_density(
        values
    )


def log_likelihood_and_grad(
    values: np.ndarray,
    spec: MlpSpec,
    batch: LabeledBatch,
    kind: LikelihoodKind,
    noise_var: float = 1.0,
) -> tuple[float, np.ndarray]:
    if len(batch) == 0:
        return 0.0, np.zeros(spec.n_params)
    return ad.value_and_grad(
        lambda theta: log_likelihood_graph(theta, spec, batch, kind, noise_var),
        values,
    )


def save_params(path: str | Path, params: ParamVector) -> None:
    write_float_block(path, PARAMS_MAGIC, params.values)


def load_params(path: str | Path, spec: MlpSpec) -> ParamVector:
    return ParamVector(read_float_block(path, PARAMS_MAGIC), spec)


def default_likelihood(spec: MlpSpec) -> LikelihoodKind:
    """Likelihood matching the network head."""
    if spec.output is OutputKind.LOGIT:
        return LikelihoodKind.BERNOULLI
    if spec.output is OutputKind.LOGITS:
        return LikelihoodKind.CATEGORICAL
    return LikelihoodKind.GAUSSIAN
