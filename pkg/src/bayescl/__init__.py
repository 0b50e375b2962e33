"""Bayesian continual learning on small neural networks.

This package provides the inference machinery for comparing sequential posterior
propagation (HMC samples summarized by Gaussian mixtures), mean-field variational
continual learning and probabilistic prototype classifiers on shared task streams.
Gradients come from the in-package reverse-mode autodiff in ``bayescl.autodiff``.
"""

from .baselines import SgdConfig, run_sgd_multitask, run_sgd_sequential, train_map
from .conjugate import (
    ChangepointScenario,
    GaussianBelief,
    OuDynamics,
    batch_posterior,
    filter_step,
    kalman_bnn_filter,
    run_changepoint,
)
from .errors import (
    BayesClError,
    ConvergenceGateError,
    DegenerateMixtureError,
    EmMonotonicityError,
    EmptyTapeError,
    NonFiniteValueError,
)
from .gmm import GaussianMixture, GmmConfig, fit_em, select_components
from .hmc import ChainSet, HmcConfig, run_chains, sample_chain
from .models import (
    Activation,
    IsotropicGaussian,
    LabeledBatch,
    LikelihoodKind,
    MlpSpec,
    OutputKind,
    ParamVector,
)
from .protocl import ProtoClConfig, ProtoState, run_protocl
from .seqbayes import PropagationConfig, propagate, run_multitask_hmc
from .tasks import AccuracyMatrix, Coreset, Scenario, Task, TaskStream
from .vcl import HeadMode, MeanFieldPosterior, VclConfig, train_vcl

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix",
    "Activation",
    "BayesClError",
    "ChainSet",
    "ChangepointScenario",
    "ConvergenceGateError",
    "Coreset",
    "DegenerateMixtureError",
    "EmMonotonicityError",
    "EmptyTapeError",
    "GaussianBelief",
    "GaussianMixture",
    "GmmConfig",
    "HeadMode",
    "HmcConfig",
    "IsotropicGaussian",
    "LabeledBatch",
    "LikelihoodKind",
    "MeanFieldPosterior",
    "MlpSpec",
    "NonFiniteValueError",
    "OuDynamics",
    "OutputKind",
    "ParamVector",
    "PropagationConfig",
    "ProtoClConfig",
    "ProtoState",
    "Scenario",
    "SgdConfig",
    "Task",
    "TaskStream",
    "VclConfig",
    "batch_posterior",
    "filter_step",
    "fit_em",
    "kalman_bnn_filter",
    "propagate",
    "run_chains",
    "run_changepoint",
    "run_multitask_hmc",
    "run_protocl",
    "run_sgd_multitask",
    "run_sgd_sequential",
    "sample_chain",
    "select_components",
    "train_map",
    "train_vcl",
]
