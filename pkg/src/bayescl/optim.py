"""First-order optimizers over flat parameter vectors."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    """Adam with bias correction.

    The optimizer *minimizes*; callers maximizing an objective pass its negated
    gradient.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = field(default=0, init=False)
    _m: np.ndarray | None = field(default=None, init=False, repr=False)
    _v: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )

    def reset(self) -> None:
        self.step_count = 0
        self._m = None
        self._v = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameters; ``params`` is not modified."""
        grad = np.asarray(grad, dtype=np.float64)
        if self._m is None or self._m.shape != grad.shape:
            self._m = np.zeros_like(grad)
            self._v = np.zeros_like(grad)
            self.step_count = 0
        self.step_count += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad**2
        m_hat = self._m / (1.0 - self.beta1**self.step_count)
        v_hat = self._v / (1.0 - self.beta2**self.step_count)
        return np.asarray(params, dtype=np.float64) - self.learning_rate * m_hat / (
            np.sqrt(v_hat) + self.eps
        )


def minibatches(
    n: int, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffled index chunks covering ``range(n)`` once."""
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]
