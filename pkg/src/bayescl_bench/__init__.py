"""Experiment harness for the bayescl learners.

Builds task streams from IDX files or toy generators, parses and lints JSON
experiment files, and runs experiments over seeds with CSV/JSON artifacts.
"""

from .config import ConfigError, ExperimentConfig, ExperimentKind
from .config_linter import ConfigIssue, ConfigLinter
from .config_parser import BaseConfigParser, ConfigParser
from .datasets import (
    CountMismatchError,
    Dataset,
    IdxFormatError,
    TruncatedFileError,
    WrongMagicError,
    gen_toy_tasks,
    load_idx,
    split_by_classes,
)
from .experiments import run_experiment

__all__ = [
    "BaseConfigParser",
    "ConfigError",
    "ConfigIssue",
    "ConfigLinter",
    "ConfigParser",
    "CountMismatchError",
    "Dataset",
    "ExperimentConfig",
    "ExperimentKind",
    "IdxFormatError",
    "TruncatedFileError",
    "WrongMagicError",
    "gen_toy_tasks",
    "load_idx",
    "run_experiment",
    "split_by_classes",
]
