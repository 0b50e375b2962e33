"""Full-covariance Gaussian mixtures fitted by EM.

A fitted :class:`GaussianMixture` is immutable and doubles as a differentiable
HMC prior (``log_density`` / ``log_density_grad`` / ``value_and_grad``).
"""

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import DegenerateMixtureError, EmMonotonicityError
from .serialization import decode_array, encode_array

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmConfig:
    """EM and model-selection settings.

    Attributes:
        candidates: Component counts tried by :func:`select_components`
        reg: Diagonal jitter added to every covariance
        tol: Convergence threshold on the mean log-likelihood change
        max_iter: EM iteration cap per restart
        n_restarts: Random-responsibility restarts; the best is kept
        holdout_frac: Fraction of samples held out for selection
        min_weight: Components lighter than this are pruned
        monotone_tol: Relative round-off decrease of the EM objective tolerated
            before :class:`EmMonotonicityError` is raised
        one_se_rule: Select the smallest K within one standard error of the
            best held-out score instead of the best score itself

    """

    candidates: tuple[int, ...] = (1, 2, 3, 5, 8, 10)
    reg: float = 1e-6
    tol: float = 1e-6
    max_iter: int = 200
    n_restarts: int = 5
    holdout_frac: float = 0.2
    min_weight: float = 1e-8
    monotone_tol: float = 1e-9
    one_se_rule: bool = False

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(int(k) for k in self.candidates))
        if not self.candidates or min(self.candidates) < 1:
            raise ValueError(f"candidates must be positive, got {self.candidates}")
        if not 0.0 < self.holdout_frac < 1.0:
            raise ValueError(
                f"holdout_frac must lie in (0, 1), got {self.holdout_frac}"
            )
        if self.n_restarts < 1 or self.max_iter < 1:
            raise ValueError("n_restarts and max_iter must be >= 1")
        if self.reg < 0:
            raise ValueError(f"reg must be >= 0, got {self.reg}")
        if self.monotone_tol < 0:
            raise ValueError(f"monotone_tol must be >= 0, got {self.monotone_tol}")


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture weights, means and full covariances.

    Attributes:
        weights: (K,) non-negative, summing to one
        means: (K, D)
        covariances: (K, D, D) symmetric positive-definite
        history: Mean per-sample log-likelihood after each EM iteration

    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    history: tuple[float, ...] = field(default=(), compare=False)
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).ravel()
        means = np.atleast_2d(np.array(self.means, dtype=np.float64))
        covs = np.array(self.covariances, dtype=np.float64)
        if covs.ndim == 2:
            covs = covs[None]
        k, d = means.shape
        if weights.shape != (k,) or covs.shape != (k, d, d):
            raise ValueError(
                f"Inconsistent mixture shapes: weights {weights.shape}, "
                f"means {means.shape}, covariances {covs.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"Mixture weights must sum to 1, got {weights.sum()}")
        weights = weights / weights.sum()
        chol = np.empty_like(covs)
        for i in range(k):
            try:
                chol[i] = cholesky(covs[i], lower=True)
            except LinAlgError as exc:
                raise ValueError(f"Covariance {i} is not positive definite") from exc
        arrays = {
            "weights": weights,
            "means": means,
            "covariances": covs,
            "_chol": chol,
        }
        for name, value in arrays.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def cholesky_factors(self) -> np.ndarray:
        return self._chol

    def _as_points(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(getattr(x, "values", x), dtype=np.float64)
        single = x.ndim == 1
        points = x[None] if single else x
        if points.shape[1] != self.dim:
            raise ValueError(f"Expected dimension {self.dim}, got {points.shape[1]}")
        return points, single

    def component_log_densities(self, x: np.ndarray) -> np.ndarray:
        """(n, K) matrix of log pi_k + log N(x; m_k, C_k)."""
        points, _ = self._as_points(x)
        out = np.empty((points.shape[0], self.n_components))
        with np.errstate(divide="ignore"):
            log_weights = np.log(self.weights)
        for k in range(self.n_components):
            chol = self._chol[k]
            z = solve_triangular(chol, (points - self.means[k]).T, lower=True)
            log_det = 2.0 * np.sum(np.log(np.diag(chol)))
            out[:, k] = (
                log_weights[k]
                - 0.5 * (self.dim * _LOG_2PI + log_det)
                - 0.5 * np.sum(z**2, axis=0)
            )
        return out

    def log_density(self, x: np.ndarray) -> float | np.ndarray:
        """Log density at one point (float) or at each row of a matrix."""
        points, single = self._as_points(x)
        values = logsumexp(self.component_log_densities(points), axis=1)
        return float(values[0]) if single else values

    def log_density_grad(self, x: np.ndarray) -> np.ndarray:
        """Analytic gradient: -sum_k r_k(x) C_k^-1 (x - m_k)."""
        return self.value_and_grad(x)[1]

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        point = np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()
        comp = self.component_log_densities(point)[0]
        total = logsumexp(comp)
        resp = np.exp(comp - total)
        grad = np.zeros(self.dim)
        for k in range(self.n_components):
            if resp[k] == 0.0:
                continue
            grad -= resp[k] * cho_solve((self._chol[k], True), point - self.means[k])
        return float(total), grad

    def sample(self, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        """Ancestral sampling: component by weight, then its Gaussian."""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        components = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[components] + np.einsum(
            "nij,nj->ni", self._chol[components], z
        )

    def to_dict(self) -> dict:
        return {
            "n_components": self.n_components,
            "dim": self.dim,
            "weights": encode_array(self.weights),
            "means": encode_array(self.means),
            "cholesky": encode_array(self._chol),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        chol = decode_array(data["cholesky"])
        covariances = np.einsum("kij,klj->kil", chol, chol)
        return cls(
            decode_array(data["weights"]), decode_array(data["means"]), covariances
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "GaussianMixture":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class _EmState:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    history: list[float] = field(default_factory=list)
    n_pruned: int = 0


def _m_step(
    samples: np.ndarray, resp: np.ndarray, cfg: GmmConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    n, d = samples.shape
    counts = resp.sum(axis=0)
    keep = counts / n >= cfg.min_weight
    weights, means, covs = [], [], []
    for k in np.flatnonzero(keep):
        mean = resp[:, k] @ samples / counts[k]
        diff = samples - mean
        cov = (resp[:, k, None] * diff).T @ diff / counts[k]
        cov = 0.5 * (cov + cov.T) + cfg.reg * np.eye(d)
        try:
            cholesky(cov, lower=True)
        except LinAlgError:
            keep[k] = False
            continue
        weights.append(counts[k] / n)
        means.append(mean)
        covs.append(cov)
    n_pruned = int(keep.size - len(weights))
    if not weights:
        return np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d)), n_pruned
    weights = np.array(weights)
    return weights / weights.sum(), np.array(means), np.array(covs), n_pruned


def _run_em(
    samples: np.ndarray, n_components: int, rng: np.random.Generator, cfg: GmmConfig
) -> _EmState | None:
    n = samples.shape[0]
    resp = rng.dirichlet(np.ones(n_components), size=n)
    weights, means, covs, n_pruned = _m_step(samples, resp, cfg)
    state = _EmState(weights, means, covs, n_pruned=n_pruned)
    previous = -math.inf
    for iteration in range(cfg.max_iter):
        if state.weights.size == 0:
            return None
        mixture = GaussianMixture(state.weights, state.means, state.covariances)
        log_joint = mixture.component_log_densities(samples)
        log_norm = logsumexp(log_joint, axis=1)
        current = float(np.mean(log_norm))
        state.history.append(current)
        if current < previous - cfg.monotone_tol * max(1.0, abs(previous)):
            raise EmMonotonicityError(iteration, previous, current)
        if abs(current - previous) < cfg.tol:
            break
        previous = current
        resp = np.exp(log_joint - log_norm[:, None])
        weights, means, covs, pruned = _m_step(samples, resp, cfg)
        if pruned:
            logger.warning("Pruned %d collapsed mixture component(s)", pruned)
            state.n_pruned += pruned
            # The objective is not comparable across a change of K.
            previous = -math.inf
        state.weights, state.means, state.covariances = weights, means, covs
    if state.weights.size == 0:
        return None
    return state


def fit_em(
    samples: np.ndarray,
    n_components: int,
    cfg: GmmConfig | None = None,
    seed: int | np.random.Generator = 0,
) -> GaussianMixture:
    """Fit a mixture by EM, keeping the best of ``cfg.n_restarts`` restarts.

    Args:
        samples: (n, D) matrix with n > n_components
        n_components: Number of components K
        cfg: EM settings
        seed: Seed for the random initial responsibilities

    Returns:
        The restart with the highest final mean log-likelihood; its per-iteration
        history is attached. Collapsed components are pruned, so the result may
        have fewer than K components.

    Raises:
        ValueError: If n <= K or the samples are not a 2-D matrix
        DegenerateMixtureError: If every restart collapsed

    """
    cfg = cfg or GmmConfig()
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[1] < 1:
        raise ValueError(f"samples must be an (n, D) matrix, got {samples.shape}")
    if samples.shape[0] <= n_components:
        raise ValueError(
            f"Need more samples ({samples.shape[0]}) than components ({n_components})"
        )
    rng = np.random.default_rng(seed)
    best: _EmState | None = None
    for restart in range(cfg.n_restarts):
        state = _run_em(samples, n_components, rng, cfg)
        if state is None:
            logger.warning("EM restart %d collapsed (K=%d)", restart, n_components)
            continue
        logger.debug(
            "EM restart %d (K=%d): %d iterations, mean log-lik %.6f",
            restart,
            n_components,
            len(state.history),
            state.history[-1],
        )
        if best is None or state.history[-1] > best.history[-1]:
            best = state
    if best is None:
        raise DegenerateMixtureError(
            f"Every EM restart collapsed for K={n_components}"
        )
    return GaussianMixture(
        best.weights, best.means, best.covariances, tuple(best.history)
    )


def _within_one_se(scores: dict[int, np.ndarray], best_k: int) -> int:
    for k in sorted(scores):
        diff = scores[best_k] - scores[k]
        stderr = diff.std(ddof=1) / math.sqrt(diff.size) if diff.size > 1 else 0.0
        if diff.mean() <= stderr:
            return k
    return best_k


def select_components(
    samples: np.ndarray,
    candidates: tuple[int, ...] | list[int] | None = None,
    holdout_frac: float | None = None,
    seed: int = 0,
    cfg: GmmConfig | None = None,
) -> tuple[int, GaussianMixture]:
    """Choose K by held-out log-likelihood, then refit on every sample.

    The K with the highest mean held-out log-density is chosen. With
    ``cfg.one_se_rule`` the smallest K whose score is within one standard error
    of the best (paired over held-out points) is chosen instead.

    Raises:
        ValueError: On an empty candidate list or a holdout fraction outside (0, 1)
        DegenerateMixtureError: If every candidate fit collapsed

    """
    cfg = cfg or GmmConfig()
    candidates = tuple(cfg.candidates if candidates is None else candidates)
    holdout_frac = cfg.holdout_frac if holdout_frac is None else holdout_frac
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if not 0.0 < holdout_frac < 1.0:
        raise ValueError(f"holdout_frac must lie in (0, 1), got {holdout_frac}")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]

    rng = np.random.default_rng(seed)
    order = rng.permutation(samples.shape[0])
    n_holdout = max(1, int(round(holdout_frac * samples.shape[0])))
    holdout, train = samples[order[:n_holdout]], samples[order[n_holdout:]]

    scores: dict[int, np.ndarray] = {}
    for k in sorted(set(candidates)):
        if train.shape[0] <= k:
            continue
        try:
            fitted = fit_em(train, k, cfg, seed=seed)
        except DegenerateMixtureError:
            continue
        scores[k] = fitted.log_density(holdout)
        logger.info("K=%d: held-out mean log-lik %.6f", k, scores[k].mean())
    if not scores:
        raise DegenerateMixtureError(f"All candidate fits degenerate: {candidates}")

    best_k = max(scores, key=lambda k: scores[k].mean())
    chosen = _within_one_se(scores, best_k) if cfg.one_se_rule else best_k
    logger.info("Selected K=%d (best held-out K=%d)", chosen, best_k)
    return chosen, fit_em(samples, chosen, cfg, seed=seed)
