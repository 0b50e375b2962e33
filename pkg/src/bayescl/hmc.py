"""Hamiltonian Monte Carlo over flat parameter vectors.

Fixed step size and trajectory length, identity mass matrix, standard normal
momenta. Targets are callables returning ``(log_density, gradient)`` at a point,
or any object exposing such a ``value_and_grad`` method.
"""

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path

import numpy as np

from .errors import NonFiniteValueError
from .serialization import SAMPLES_MAGIC, read_float_block, write_float_block

logger = logging.getLogger(__name__)

ValueAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]

MIN_ESS_SAMPLES = 100


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings.

    Attributes:
        step_size: Leapfrog step size
        n_leapfrog: Leapfrog steps per trajectory
        n_burnin: Discarded warm-up iterations per chain
        n_samples: Retained iterations per chain
        n_chains: Independent chains
        seed: Base seed; chain ``i`` uses ``seed + i``
        init_jitter: Variance of the Gaussian jitter added to a shared init
        divergence_threshold: |delta H| above which a trajectory is divergent
        min_acceptance: Burn-in acceptance below this raises a warning

    """

    step_size: float = 0.001
    n_leapfrog: int = 20
    n_burnin: int = 1000
    n_samples: int = 10000
    n_chains: int = 20
    seed: int = 0
    init_jitter: float = 0.01
    divergence_threshold: float = 1000.0
    min_acceptance: float = 0.05

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.n_leapfrog < 1:
            raise ValueError(f"n_leapfrog must be >= 1, got {self.n_leapfrog}")
        for name in ("n_burnin", "n_samples", "n_chains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.init_jitter < 0:
            raise ValueError(f"init_jitter must be >= 0, got {self.init_jitter}")


@dataclass(frozen=True)
class LeapfrogResult:
    position: np.ndarray
    momentum: np.ndarray
    divergent: bool = False


@dataclass(frozen=True)
class EffectiveSampleSize:
    """Per-dimension ESS with a flag for constant dimensions."""

    values: np.ndarray
    degenerate: np.ndarray

    @property
    def min(self) -> float:
        return float(np.min(self.values)) if self.values.size else float("nan")


@dataclass
class Chain:
    """Post-burn-in output of one HMC chain."""

    samples: np.ndarray
    acceptance_rate: float
    burnin_acceptance: float
    log_posterior_trace: np.ndarray
    ess: EffectiveSampleSize | None
    n_divergent: int = 0
    seed: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def divergent(self) -> bool:
        return self.n_divergent > 0

    def diagnostics(self) -> dict:
        trace = self.log_posterior_trace
        return {
            "seed": self.seed,
            "acceptance_rate": self.acceptance_rate,
            "burnin_acceptance": self.burnin_acceptance,
            "n_divergent": self.n_divergent,
            "ess": None if self.ess is None else self.ess.values.tolist(),
            "ess_degenerate": (
                None if self.ess is None else self.ess.degenerate.tolist()
            ),
            "log_posterior": {
                "mean": float(np.mean(trace)),
                "std": float(np.std(trace)),
                "min": float(np.min(trace)),
                "max": float(np.max(trace)),
                "first": float(trace[0]),
                "last": float(trace[-1]),
            },
            "warnings": list(self.warnings),
        }


@dataclass
class ChainSet:
    """Chains of one run, in chain-index order."""

    chains: list[Chain]

    @property
    def samples(self) -> np.ndarray:
        return np.concatenate([c.samples for c in self.chains])

    @property
    def divergent_chains(self) -> list[int]:
        return [i for i, c in enumerate(self.chains) if c.divergent]

    @property
    def pooled_ess(self) -> np.ndarray | None:
        if any(c.ess is None for c in self.chains):
            return None
        return np.sum([c.ess.values for c in self.chains], axis=0)

    @property
    def min_ess(self) -> float:
        pooled = self.pooled_ess
        return float("nan") if pooled is None else float(np.min(pooled))

    @property
    def rhat(self) -> np.ndarray | None:
        if len(self.chains) < 2 or self.chains[0].samples.shape[0] < 4:
            return None
        return split_rhat(np.stack([c.samples for c in self.chains]))

    def diagnostics(self) -> dict:
        rhat = self.rhat
        pooled = self.pooled_ess
        return {
            "n_chains": len(self.chains),
            "n_samples": int(self.samples.shape[0]),
            "divergent_chains": self.divergent_chains,
            "min_pooled_ess": self.min_ess,
            "pooled_ess": None if pooled is None else pooled.tolist(),
            "max_rhat": None if rhat is None else float(np.nanmax(rhat)),
            "chains": [c.diagnostics() for c in self.chains],
        }


def _resolve_target(log_post) -> ValueAndGrad:
    if hasattr(log_post, "value_and_grad"):
        return log_post.value_and_grad
    if hasattr(log_post, "log_density_grad"):
        return lambda q: (log_post.log_density(q), log_post.log_density_grad(q))
    return log_post


def _safe_eval(value_and_grad: ValueAndGrad, q: np.ndarray):
    try:
        value, grad = value_and_grad(q)
    except (NonFiniteValueError, FloatingPointError):
        return None
    grad = np.asarray(grad, dtype=np.float64)
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        return None
    return float(value), grad


def _integrate(q, p, grad, value_and_grad, step_size, n_steps):
    """Leapfrog from (q, p) given the gradient at q; None on divergence."""
    q = q.copy()
    p = p + 0.5 * step_size * grad
    value = None
    for step in range(n_steps):
        q = q + step_size * p
        evaluated = _safe_eval(value_and_grad, q)
        if evaluated is None:
            return None
        value, grad = evaluated
        if step < n_steps - 1:
            p = p + step_size * grad
    p = p + 0.5 * step_size * grad
    return q, p, value, grad


def leapfrog(
    q: np.ndarray,
    p: np.ndarray,
    grad: Callable[[np.ndarray], np.ndarray],
    step_size: float,
    n_steps: int,
) -> LeapfrogResult:
    """Run ``n_steps`` symplectic leapfrog steps on H(q, p) = -log pi(q) + p.p / 2.

    Args:
        q: Position
        p: Momentum
        grad: Gradient of the log density
        step_size: Step size
        n_steps: Number of steps

    Returns:
        The end point. If a gradient becomes non-finite mid-trajectory the result
        carries ``divergent=True`` and the starting point.

    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    start = _safe_eval(lambda x: (0.0, grad(x)), q)
    if start is None:
        return LeapfrogResult(q.copy(), p.copy(), divergent=True)
    result = _integrate(q, p, start[1], lambda x: (0.0, grad(x)), step_size, n_steps)
    if result is None:
        return LeapfrogResult(q.copy(), p.copy(), divergent=True)
    return LeapfrogResult(result[0], result[1])


def hamiltonian(log_density: float, p: np.ndarray) -> float:
    return -log_density + 0.5 * float(np.dot(p, p))


def sample_chain(
    log_post,
    init: np.ndarray,
    cfg: HmcConfig,
    seed: int | None = None,
) -> Chain:
    """Draw one Metropolis-corrected HMC chain.

    Args:
        log_post: Target returning ``(log density, gradient)``
        init: Starting position (array or ParamVector)
        cfg: Sampler settings
        seed: Chain seed; defaults to ``cfg.seed``

    Returns:
        The post-burn-in chain with its diagnostics

    Raises:
        ValueError: If the target is not finite at ``init``

    """
    value_and_grad = _resolve_target(log_post)
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    q = np.array(getattr(init, "values", init), dtype=np.float64).ravel()
    current = _safe_eval(value_and_grad, q)
    if current is None:
        raise ValueError("Log posterior is not finite at the initial point")
    logp, grad = current

    dim = q.size
    total = cfg.n_burnin + cfg.n_samples
    samples = np.empty((cfg.n_samples, dim))
    trace = np.empty(cfg.n_samples)
    accepted_burnin = 0
    accepted = 0
    n_divergent = 0

    for it in range(total):
        p0 = rng.standard_normal(dim)
        log_u = math.log(rng.uniform())
        result = _integrate(
            q, p0, grad, value_and_grad, cfg.step_size, cfg.n_leapfrog
        )
        accept = False
        if result is None:
            n_divergent += 1
        else:
            q_new, p_new, logp_new, grad_new = result
            delta_h = hamiltonian(logp_new, p_new) - hamiltonian(logp, p0)
            if not math.isfinite(delta_h) or abs(delta_h) > cfg.divergence_threshold:
                n_divergent += 1
            elif log_u < -delta_h:
                accept = True
                q, logp, grad = q_new, logp_new, grad_new

        if it < cfg.n_burnin:
            accepted_burnin += accept
        else:
            accepted += accept
            samples[it - cfg.n_burnin] = q
            trace[it - cfg.n_burnin] = logp
        if (it + 1) % 1000 == 0:
            logger.debug("chain seed=%d: iteration %d/%d", seed, it + 1, total)

    burnin_acceptance = accepted_burnin / cfg.n_burnin
    warnings = []
    if burnin_acceptance < cfg.min_acceptance:
        message = (
            f"Burn-in acceptance {burnin_acceptance:.3f} below "
            f"{cfg.min_acceptance} (seed {seed})"
        )
        logger.warning(message)
        warnings.append(message)
    if n_divergent:
        logger.warning("chain seed=%d: %d divergent trajectories", seed, n_divergent)

    ess = (
        effective_sample_size(samples) if cfg.n_samples >= MIN_ESS_SAMPLES else None
    )
    return Chain(
        samples=samples,
        acceptance_rate=accepted / cfg.n_samples,
        burnin_acceptance=burnin_acceptance,
        log_posterior_trace=trace,
        ess=ess,
        n_divergent=n_divergent,
        seed=seed,
        warnings=warnings,
    )


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation along axis 0 via FFT, per column."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, n=size, axis=0)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), n=size, axis=0)[:n] / n
    with np.errstate(invalid="ignore", divide="ignore"):
        return acov / acov[0]


def effective_sample_size(samples: np.ndarray) -> EffectiveSampleSize:
    """Geyer initial-positive-sequence ESS per dimension of one chain.

    Args:
        samples: (n, D) matrix, or an (n,) vector

    Raises:
        ValueError: With fewer than 100 samples

    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, dim = samples.shape
    if n < MIN_ESS_SAMPLES:
        raise ValueError(f"ESS needs at least {MIN_ESS_SAMPLES} samples, got {n}")

    degenerate = np.ptp(samples, axis=0) == 0.0
    rho = autocorrelation(samples)
    rho[:, degenerate] = 0.0

    n_pairs = n // 2
    pairs = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    positive = np.cumprod(pairs >= 0.0, axis=0).astype(bool)
    monotone = np.minimum.accumulate(np.where(positive, pairs, np.inf), axis=0)
    tau = -1.0 + 2.0 * np.sum(np.where(positive, monotone, 0.0), axis=0)
    # Anti-correlated chains can drive tau to zero or below.
    tau = np.maximum(tau, 1.0 / math.log10(n))

    values = n / tau
    values[degenerate] = 1.0
    return EffectiveSampleSize(values=values, degenerate=degenerate)


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split potential scale reduction per dimension.

    Args:
        chains: (n_chains, n_samples, D) array

    """
    chains = np.asarray(chains, dtype=np.float64)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    half = chains.shape[1] // 2
    split = np.concatenate([chains[:, :half], chains[:, -half:]], axis=0)
    n = split.shape[1]
    chain_mean = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean(axis=0)
    between = n * chain_mean.var(axis=0, ddof=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        var_plus = (n - 1) / n * within + between / n
        return np.sqrt(var_plus / within)


def chain_inits(
    inits: np.ndarray | Sequence[np.ndarray], cfg: HmcConfig
) -> list[np.ndarray]:
    """One starting point per chain.

    A single vector is jittered per chain with N(0, cfg.init_jitter) noise drawn
    from the chain's own seed; a list or matrix gives the points explicitly.
    """
    if (isinstance(inits, np.ndarray) and inits.ndim == 1) or hasattr(inits, "spec"):
        base = np.array(getattr(inits, "values", inits), dtype=np.float64)
        if cfg.n_chains == 1:
            return [base]
        scale = math.sqrt(cfg.init_jitter)
        jittered = []
        for i in range(cfg.n_chains):
            noise = np.random.default_rng(cfg.seed + i).standard_normal(base.size)
            jittered.append(base + scale * noise)
        return jittered
    points = [np.array(getattr(x, "values", x), dtype=np.float64) for x in inits]
    if len(points) != cfg.n_chains:
        raise ValueError(f"Expected {cfg.n_chains} inits, got {len(points)}")
    return points


def run_chains(
    log_post,
    inits: np.ndarray | Sequence[np.ndarray],
    cfg: HmcConfig,
    threads: int = 1,
) -> ChainSet:
    """Run ``cfg.n_chains`` chains, chain ``i`` seeded with ``cfg.seed + i``.

    Divergent chains are kept and flagged. Results are ordered by chain index
    regardless of completion order.
    """
    points = chain_inits(inits, cfg)
    logger.info(
        "Running %d chains (%d burn-in + %d samples, eps=%g, L=%d)",
        cfg.n_chains,
        cfg.n_burnin,
        cfg.n_samples,
        cfg.step_size,
        cfg.n_leapfrog,
    )
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [
            pool.submit(sample_chain, log_post, point, cfg, cfg.seed + i)
            for i, point in enumerate(points)
        ]
        chains = [f.result() for f in futures]
    result = ChainSet(chains)
    if result.divergent_chains:
        logger.warning("Divergent chains: %s", result.divergent_chains)
    return result


def save_chains(path: str | Path, chains: ChainSet) -> Path:
    """Write pooled samples plus a JSON diagnostics sidecar; returns the sidecar."""
    path = Path(path)
    samples = chains.samples
    write_float_block(path, SAMPLES_MAGIC, samples)
    sidecar = path.with_suffix(".json")
    payload = {"shape": list(samples.shape), **chains.diagnostics()}
    sidecar.write_text(json.dumps(payload, indent=2))
    return sidecar


def load_chain_samples(path: str | Path) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    return read_float_block(path, SAMPLES_MAGIC).reshape(sidecar["shape"])
