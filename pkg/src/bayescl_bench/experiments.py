"""Experiment runners writing CSV and JSON artifacts.

Each seed writes into its own ``seed_<n>`` directory under the output directory,
so seeds can run concurrently without sharing files. When every seed has finished,
``aggregate.json`` collects the mean and standard deviation of each summary metric.
A seed that fails leaves its partial artifacts in place next to a ``FAILED``
marker holding the error.
"""

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field, replace
import json
import logging
from pathlib import Path
import traceback
from typing import Any

import numpy as np

from bayescl.baselines import run_sgd_multitask, run_sgd_sequential
from bayescl.conjugate import run_changepoint
from bayescl.hmc import save_chains
from bayescl.models import default_likelihood
from bayescl.protocl import run_protocl
from bayescl.seqbayes import propagate, run_multitask_hmc
from bayescl.tasks import TaskStream, coreset_sample
from bayescl.vcl import train_vcl

from .config import ExperimentConfig, ExperimentKind
from .datasets import gen_toy_tasks, load_dataset, split_by_classes

logger = logging.getLogger(__name__)

FAILURE_MARKER = "FAILED"
SUMMARY_FILE = "summary.json"
AGGREGATE_FILE = "aggregate.json"


def build_stream(config: ExperimentConfig) -> TaskStream:
    """Task stream named by ``config.data``; independent of the run seed."""
    data = config.data
    if data.is_toy:
        kind = data.name.removeprefix("toy-")
        stream = gen_toy_tasks(kind, data.n_per_class, data.seed)
    else:
        root = None if data.name == "surrogate" else data.root
        dataset = load_dataset(data.name, root, data.seed)
        stream = split_by_classes(dataset, data.pairs, data.scenario)
    if data.max_train_per_task is None:
        return stream
    tasks = []
    for task in stream.tasks:
        if len(task.train) > data.max_train_per_task:
            train, _ = coreset_sample(
                task.train, data.max_train_per_task, data.seed + task.task_id
            )
            task = replace(task, train=train)
        tasks.append(task)
    return TaskStream(tuple(tasks), stream.scenario, stream.name)


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _run_filter(config: ExperimentConfig, seed: int, out: Path) -> dict[str, Any]:
    scenario = config.filter.changepoint()
    trajectory = run_changepoint(scenario, seed)
    trajectory.to_csv(out / "trajectory.csv")
    final = trajectory.final
    expected = scenario.expected_final_mean
    return {
        "final_mean": final.mean,
        "final_var": final.variance,
        "expected_final_mean": expected,
        "z_score": (final.mean - expected) / final.std,
    }


def _run_hmc_cl(config: ExperimentConfig, seed: int, out: Path) -> dict[str, Any]:
    stream = build_stream(config)
    spec = config.model.spec(stream.input_width, stream.n_classes)
    propagation = replace(config.propagation, likelihood=default_likelihood(spec))
    run = propagate(
        stream,
        spec,
        replace(config.hmc, seed=seed),
        config.gmm,
        propagation,
    )
    run.accuracy.to_csv(out / "accuracy.csv")
    for record in run.records:
        task_dir = out / f"task_{record.task_id + 1}"
        task_dir.mkdir(exist_ok=True)
        record.mixture.save(task_dir / "mixture.json")
        _write_json(task_dir / "diagnostics.json", record.diagnostics)
    fidelity_gaps = [abs(r.fidelity[0] - r.fidelity[1]) for r in run.records]
    return {
        "final_average": run.accuracy.final_average,
        "averages": run.accuracy.averages.tolist(),
        "n_components": [r.mixture.n_components for r in run.records],
        "max_fidelity_gap": max(fidelity_gaps),
    }


def _run_protocl(config: ExperimentConfig, seed: int, out: Path) -> dict[str, Any]:
    stream = build_stream(config)
    cfg = replace(config.protocl, n_classes=stream.n_classes)
    budgets = config.coreset_sizes or (cfg.coreset_size,)
    by_budget = {}
    for budget in budgets:
        run = run_protocl(stream, replace(cfg, coreset_size=budget), seed)
        suffix = "" if len(budgets) == 1 else f"_coreset{budget}"
        run.accuracy.to_csv(out / f"accuracy{suffix}.csv")
        with open(out / f"alpha{suffix}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["after_task", "class", "alpha"])
            for t, alpha in enumerate(run.alpha_history, start=1):
                for j, a in enumerate(alpha):
                    writer.writerow([t, j, repr(float(a))])
        run.learner.state.save(out / f"prototypes{suffix}.json")
        by_budget[budget] = run.accuracy.final_average
    summary: dict[str, Any] = {"final_average": by_budget[budgets[0]]}
    if len(budgets) > 1:
        summary.update({f"final_average_coreset{b}": v for b, v in by_budget.items()})
    return summary


def _run_vcl(config: ExperimentConfig, seed: int, out: Path) -> dict[str, Any]:
    stream = build_stream(config)
    run = train_vcl(stream, config.vcl, config.head_mode, seed)
    run.accuracy.to_csv(out / "accuracy.csv")
    return {
        "final_average": run.accuracy.final_average,
        "averages": run.accuracy.averages.tolist(),
        "head_mode": run.mode.value,
    }


def _run_sgd(config: ExperimentConfig, seed: int, out: Path) -> dict[str, Any]:
    stream = build_stream(config)
    spec = config.model.spec(stream.input_width, stream.n_classes)
    sequential = run_sgd_sequential(stream, spec, config.sgd, seed)
    sequential.to_csv(out / "accuracy.csv")
    multitask = run_sgd_multitask(stream, spec, config.sgd, seed)
    return {
        "final_average": sequential.final_average,
        "averages": sequential.averages.tolist(),
        "multitask_average": multitask.mean,
        "multitask_accuracies": list(multitask.accuracies),
    }


def _run_diagnostics(config: ExperimentConfig, seed: int, out: Path) -> dict[str, Any]:
    """Sample the pooled posterior of all tasks and keep the raw chains."""
    stream = build_stream(config)
    spec = config.model.spec(stream.input_width, stream.n_classes)
    propagation = replace(config.propagation, likelihood=default_likelihood(spec))
    chains, row = run_multitask_hmc(
        stream, spec, replace(config.hmc, seed=seed), propagation
    )
    save_chains(out / "samples.bin", chains)
    with open(out / "log_posterior.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["chain", "iteration", "log_posterior"])
        for c, chain in enumerate(chains.chains):
            for i, value in enumerate(chain.log_posterior_trace):
                writer.writerow([c, i, repr(float(value))])
    rhat = chains.rhat
    min_ess = chains.min_ess
    return {
        "multitask_average": row.mean,
        "multitask_accuracies": list(row.accuracies),
        "min_pooled_ess": None if np.isnan(min_ess) else min_ess,
        "max_rhat": None if rhat is None else float(np.nanmax(rhat)),
        "divergent_chains": chains.divergent_chains,
    }


RUNNERS: dict[ExperimentKind, Callable[[ExperimentConfig, int, Path], dict]] = {
    ExperimentKind.FILTER: _run_filter,
    ExperimentKind.HMC_CL: _run_hmc_cl,
    ExperimentKind.PROTOCL: _run_protocl,
    ExperimentKind.VCL: _run_vcl,
    ExperimentKind.SGD: _run_sgd,
    ExperimentKind.DIAGNOSTICS: _run_diagnostics,
}


@dataclass
class SeedOutcome:
    seed: int
    directory: Path
    summary: dict[str, Any] | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentReport:
    """Outcome of every seed plus the aggregate written to disk."""

    kind: ExperimentKind
    out_dir: Path
    outcomes: list[SeedOutcome] = field(default_factory=list)
    aggregate: dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> list[SeedOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def ok(self) -> bool:
        return not self.failed


def run_seed(config: ExperimentConfig, seed: int, out_dir: str | Path) -> SeedOutcome:
    """Run one seed; errors are recorded, never raised."""
    directory = Path(out_dir) / f"seed_{seed}"
    directory.mkdir(parents=True, exist_ok=True)
    marker = directory / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    logger.info("Running %s with seed %d", config.kind.value, seed)
    try:
        summary = RUNNERS[config.kind](config, seed, directory)
    except Exception as e:
        logger.error("Seed %d failed: %s", seed, e)
        marker.write_text(f"{type(e).__name__}: {e}\n\n{traceback.format_exc()}")
        return SeedOutcome(seed, directory, error=f"{type(e).__name__}: {e}")
    summary = {"kind": config.kind.value, "seed": seed, **summary}
    _write_json(directory / SUMMARY_FILE, summary)
    return SeedOutcome(seed, directory, summary)


def aggregate_summaries(summaries: list[dict[str, Any]]) -> dict[str, Any]:
    """Mean and standard deviation of every scalar metric shared by all seeds.

    The standard deviation is the sample one (``ddof=1``) when there are at least
    two seeds, and 0 otherwise.
    """
    metrics: dict[str, Any] = {}
    if not summaries:
        return metrics
    keys = [k for k in summaries[0] if k not in ("kind", "seed")]
    for key in keys:
        values = [s.get(key) for s in summaries]
        if not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            continue
        array = np.asarray(values, dtype=np.float64)
        metrics[key] = {
            "mean": float(np.mean(array)),
            "std": float(np.std(array, ddof=1)) if array.size > 1 else 0.0,
            "values": [float(v) for v in array],
        }
    return metrics


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> ExperimentReport:
    """Run every seed of ``config`` and write the aggregate.

    Seeds are spread over ``config.threads`` worker threads. The aggregate covers
    the seeds that succeeded and lists those that failed.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = ExperimentReport(config.kind, out)
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        outcomes = list(pool.map(lambda s: run_seed(config, s, out), config.seeds))
    report.outcomes = sorted(outcomes, key=lambda o: o.seed)

    succeeded = [o.summary for o in report.outcomes if o.ok]
    report.aggregate = {
        "kind": config.kind.value,
        "seeds": [o.seed for o in report.outcomes if o.ok],
        "failed_seeds": [o.seed for o in report.failed],
        "metrics": aggregate_summaries(succeeded),
        "config": config.resolved(),
    }
    _write_json(out / AGGREGATE_FILE, report.aggregate)
    return report
