"""Exception types shared across the bayescl package."""

from typing import Any


class BayesClError(Exception):
    """Base class for all domain errors raised by bayescl."""


class NonFiniteValueError(BayesClError, FloatingPointError):
    """A computation graph node produced NaN or Inf."""

    def __init__(self, node_index: int, op_kind: str, stage: str = "forward"):
        self.node_index = node_index
        self.op_kind = op_kind
        self.stage = stage
        super().__init__(
            f"Non-finite value in {stage} pass at node {node_index} ({op_kind})"
        )


class EmptyTapeError(BayesClError, ValueError):
    """Backward was requested on a tape that recorded nothing."""


class DegenerateMixtureError(BayesClError, ValueError):
    """Every candidate mixture fit collapsed."""


class ConvergenceGateError(BayesClError):
    """Posterior samples failed the effective sample size gate."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmMonotonicityError(BayesClError, ArithmeticError):
    """An EM iteration lowered the mean log-likelihood beyond round-off."""

    def __init__(self, iteration: int, previous: float, current: float):
        self.iteration = iteration
        self.previous = previous
        self.current = current
        super().__init__(
            f"EM objective decreased at iteration {iteration}: "
            f"{previous:.12g} -> {current:.12g}"
        )
