"""Experiment configuration.

An experiment file is a JSON object with a few top-level keys (``kind``, ``seeds``,
``out_dir``, ``threads``, ``head_mode``, ``coreset_sizes``) and one optional object
per section. Every section maps onto a frozen dataclass whose defaults are the
documented experiment defaults, so a minimal file is just ``{"kind": "filter"}``.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from bayescl.baselines import SgdConfig
from bayescl.conjugate import ChangepointScenario, GaussianBelief
from bayescl.errors import BayesClError
from bayescl.gmm import GmmConfig
from bayescl.hmc import HmcConfig
from bayescl.models import Activation, MlpSpec, OutputKind
from bayescl.protocl import ProtoClConfig
from bayescl.seqbayes import PropagationConfig
from bayescl.tasks import Scenario
from bayescl.vcl import HeadMode, VclConfig

from .datasets import SPLIT_PAIRS


class ConfigError(BayesClError, ValueError):
    """An experiment configuration field is invalid.

    Attributes:
        key: Dotted name of the offending field, when known

    """

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ExperimentKind(Enum):
    FILTER = "filter"
    HMC_CL = "hmc-cl"
    PROTOCL = "protocl"
    VCL = "vcl"
    SGD = "sgd"
    DIAGNOSTICS = "diagnostics"


DATASETS = (
    "toy-gaussians",
    "toy-strip-bands",
    "split-mnist",
    "split-fmnist",
    "surrogate",
)


@dataclass(frozen=True)
class DataConfig:
    """Which task stream to build.

    Attributes:
        name: One of ``DATASETS``
        root: Directory holding the IDX files of an image dataset
        scenario: ``class-incremental`` or ``domain-incremental`` for image data
        pairs: Class groups, one task each
        n_per_class: Points per class of the toy streams
        max_train_per_task: Optional cap on each task's training set
        seed: Seed of generated data and of subsampling

    """

    name: str = "toy-gaussians"
    root: str | None = None
    scenario: Scenario = Scenario.CLASS_INCREMENTAL
    pairs: tuple[tuple[int, ...], ...] = SPLIT_PAIRS
    n_per_class: int = 100
    max_train_per_task: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        if self.name not in DATASETS:
            raise ValueError(
                f"unknown dataset {self.name!r}, expected one of {DATASETS}"
            )
        if self.n_per_class < 10:
            raise ValueError(f"n_per_class must be >= 10, got {self.n_per_class}")
        if self.max_train_per_task is not None and self.max_train_per_task < 1:
            raise ValueError("max_train_per_task must be >= 1")

    @property
    def is_toy(self) -> bool:
        return self.name.startswith("toy-")


@dataclass(frozen=True)
class ModelConfig:
    """Network used by the sampled and point-estimate learners."""

    hidden: tuple[int, ...] = (10, 10)
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "activation", Activation(self.activation))
        if not self.hidden:
            raise ValueError("hidden must name at least one layer")

    def spec(self, input_width: int, n_classes: int) -> MlpSpec:
        if n_classes <= 2:
            return MlpSpec((input_width, *self.hidden, 1), self.activation)
        return MlpSpec(
            (input_width, *self.hidden, n_classes), self.activation, OutputKind.LOGITS
        )


@dataclass(frozen=True)
class FilterConfig:
    """Two-phase stream for the scalar conjugate filter.

    ``scenario`` picks a preset (``balanced`` 110/110, ``imbalanced`` 20/200);
    ``custom`` uses the explicit counts and means.
    """

    scenario: str = "balanced"
    n_first: int = 110
    mean_first: float = -1.0
    n_second: int = 110
    mean_second: float = 1.0
    noise_var: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 1.0

    def __post_init__(self):
        if self.scenario not in ("balanced", "imbalanced", "custom"):
            raise ValueError(f"unknown filter scenario {self.scenario!r}")

    def changepoint(self) -> ChangepointScenario:
        if self.scenario == "balanced":
            return ChangepointScenario.balanced()
        if self.scenario == "imbalanced":
            return ChangepointScenario.imbalanced()
        return ChangepointScenario(
            self.n_first,
            self.mean_first,
            self.n_second,
            self.mean_second,
            self.noise_var,
            GaussianBelief(self.prior_mean, self.prior_var),
        )


SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "model": ModelConfig,
    "filter": FilterConfig,
    "hmc": HmcConfig,
    "gmm": GmmConfig,
    "propagation": PropagationConfig,
    "protocl": ProtoClConfig,
    "vcl": VclConfig,
    "sgd": SgdConfig,
}

TOP_LEVEL_KEYS = (
    "kind",
    "seeds",
    "out_dir",
    "threads",
    "head_mode",
    "coreset_sizes",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment."""

    kind: ExperimentKind
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    hmc: HmcConfig = field(default_factory=HmcConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    protocl: ProtoClConfig = field(default_factory=ProtoClConfig)
    vcl: VclConfig = field(default_factory=VclConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    head_mode: HeadMode = HeadMode.SINGLE
    coreset_sizes: tuple[int, ...] = ()
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "results"
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        object.__setattr__(self, "head_mode", HeadMode(self.head_mode))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(
            self, "coreset_sizes", tuple(int(c) for c in self.coreset_sizes)
        )
        if not self.seeds:
            raise ConfigError("seed list must be nonempty", "seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds in {list(self.seeds)}", "seeds")
        if self.threads < 1:
            raise ConfigError(f"must be >= 1, got {self.threads}", "threads")
        if any(c < 0 for c in self.coreset_sizes):
            raise ConfigError("budgets must be >= 0", "coreset_sizes")

    def check_paths(self) -> None:
        """Raise if a referenced dataset directory does not exist."""
        if self.data.root is not None and not Path(self.data.root).is_dir():
            raise ConfigError(f"{self.data.root} does not exist", "data.root")

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig(**values)

    def resolved(self) -> dict[str, Any]:
        """Every field with its effective value, in JSON-compatible form."""
        return _plain(asdict(self))


def parse_seeds(value: int | str | list) -> tuple[int, ...]:
    """``5`` or ``"5"`` means seeds 0..4; a list or ``"1,3,7"`` is taken as is."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a count or a list, got {value!r}", "seeds")
    if isinstance(value, int):
        if value < 1:
            raise ConfigError(f"seed count must be >= 1, got {value}", "seeds")
        return tuple(range(value))
    if isinstance(value, str):
        text = value.strip()
        try:
            if "," not in text:
                return parse_seeds(int(text))
            return tuple(int(s) for s in text.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"cannot read seeds from {value!r}", "seeds") from None
    try:
        return tuple(int(s) for s in value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read seeds from {value!r}", "seeds") from None


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def build_section(name: str, data: Any) -> Any:
    """Instantiate section ``name`` from a JSON object; unknown keys are ignored."""
    cls = SECTIONS[name]
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", name)
    known = {f.name for f in fields(cls)}
    kwargs = {k: _tupled(v) for k, v in data.items() if k in known}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), name) from e


def build_config(data: Any) -> ExperimentConfig:
    """Resolve a decoded JSON document into an :class:`ExperimentConfig`.

    Raises:
        ConfigError: If a field has the wrong type or an invalid value

    """
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    if "kind" not in data:
        raise ConfigError("missing experiment kind", "kind")
    try:
        kind = ExperimentKind(data["kind"])
    except ValueError:
        choices = ", ".join(k.value for k in ExperimentKind)
        raise ConfigError(
            f"unknown kind {data['kind']!r}, expected one of {choices}", "kind"
        ) from None
    kwargs: dict[str, Any] = {"kind": kind}
    for name in SECTIONS:
        kwargs[name] = build_section(name, data.get(name))
    if "seeds" in data:
        kwargs["seeds"] = parse_seeds(data["seeds"])
    if "head_mode" in data:
        try:
            kwargs["head_mode"] = HeadMode(data["head_mode"])
        except ValueError:
            raise ConfigError(
                f"expected single or multi, got {data['head_mode']!r}", "head_mode"
            ) from None
    for key in ("out_dir", "threads", "coreset_sizes"):
        if key in data:
            kwargs[key] = _tupled(data[key])
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if is_dataclass(value):
        return _plain(asdict(value))
    return value
