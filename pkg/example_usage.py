#!/usr/bin/env python3
"""Example usage script for the bayes-cl-lab package.

This script demonstrates basic usage of the package after installation.
Run with: python example_usage.py
"""

import numpy as np

from bayescl import (
    ChangepointScenario,
    GmmConfig,
    HmcConfig,
    MlpSpec,
    PropagationConfig,
    ProtoClConfig,
    fit_em,
    propagate,
    run_changepoint,
    run_protocl,
)
from bayescl_bench.datasets import gen_toy_tasks


def main():
    """Demonstrate basic package functionality."""
    print("=== Conjugate filter on an imbalanced two-phase stream ===")
    scenario = ChangepointScenario.imbalanced()
    trajectory = run_changepoint(scenario, seed=0)
    final = trajectory.final
    print(f"Final belief: mean {final.mean:.3f}, variance {final.variance:.5f}")
    print(f"Expected final mean: {scenario.expected_final_mean:.3f}")

    print("\n=== Gaussian mixture fit ===")
    rng = np.random.default_rng(0)
    samples = np.concatenate(
        [rng.normal(-3.0, 1.0, (300, 2)), rng.normal(3.0, 0.5, (300, 2))]
    )
    mixture = fit_em(samples, 2, GmmConfig(n_restarts=3))
    print(f"Weights: {np.round(mixture.weights, 3)}")
    print(f"Means:\n{np.round(mixture.means, 2)}")

    print("\n=== Sequential HMC on two toy tasks ===")
    stream = gen_toy_tasks("gaussians", n_per_class=30, seed=0).prefix(2)
    spec = MlpSpec((2, 4, 1))
    hmc = HmcConfig(
        step_size=0.02, n_leapfrog=10, n_burnin=100, n_samples=200, n_chains=2
    )
    run = propagate(
        stream,
        spec,
        hmc,
        GmmConfig(candidates=(1, 2), n_restarts=2),
        PropagationConfig(eval_samples=100, em_samples=400, enforce_ess_gate=False),
    )
    for record in run.records:
        hmc_acc, gmm_acc = record.fidelity
        print(
            f"Task {record.task_id + 1}: {record.mixture.n_components} components, "
            f"HMC accuracy {hmc_acc:.3f}, mixture accuracy {gmm_acc:.3f}"
        )
    print(f"Accuracy matrix:\n{np.round(run.accuracy.values, 3)}")

    print("\n=== Prototype learner ===")
    protocl = run_protocl(
        stream, ProtoClConfig(n_classes=2, embedding_dim=4, hidden=16, epochs=10)
    )
    print(f"Final average accuracy: {protocl.accuracy.final_average:.3f}")
    print(f"Dirichlet concentrations: {np.round(protocl.alpha_history[-1], 1)}")


if __name__ == "__main__":
    main()
