"""Exceptions of the toolkit; ``kind`` names the error in CLI output."""
from typing import Optional


class LandscapeError(Exception):
    """Base class for every failure raised by the landscape toolkit."""

    kind = "landscape-error"


class InvalidArgumentError(LandscapeError, ValueError):
    kind = "invalid-argument"


class ZeroDenominatorError(LandscapeError, ZeroDivisionError):
    kind = "division-by-zero"


class NumericalOverflowError(LandscapeError, FloatingPointError):
    kind = "numerical-overflow"

    def __init__(self, message: str, step: Optional[int] = None) -> None:
        super().__init__(message)
        self.step = step


class ResourceLimitError(LandscapeError):
    kind = "resource-limit"


class ConvergenceError(LandscapeError):
    kind = "convergence"

    def __init__(
        self,
        message: str,
        residual: float = float("nan"),
        iterations: int = 0,
    ) -> None:
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SolverError(LandscapeError):
    kind = "solver"


class StructuralError(LandscapeError):
    kind = "structural"


class PrecisionError(LandscapeError):
    kind = "precision"

    def __init__(
        self, message: str, estimate: float = float("nan")
    ) -> None:
        super().__init__(message)
        self.estimate = estimate


class ConfigError(LandscapeError):
    kind = "malformed-config"


class ConfigNotFoundError(ConfigError):
    kind = "config-not-found"


class MissingInputError(LandscapeError):
    kind = "missing-input"
