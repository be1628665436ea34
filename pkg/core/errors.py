"""
ssep-lab error types
The CLI maps these onto its exit-code contract.
"""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised on purpose by ssep-lab."""


class ConfigError(LabError, ValueError):
    """Malformed or incomplete experiment configuration (exit code 2)."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class PreconditionError(LabError, ValueError):
    """An operation was asked for something outside its domain (exit code 3)."""


class StateSpaceTooLargeError(PreconditionError):
    """Exact oracle refused because the state space or ODE exceeds its cap."""


class NoiseGateError(PreconditionError):
    """Rate fit refused: Monte Carlo noise dominates one or more rows."""

    def __init__(self, message: str, rows: Optional[list[dict]] = None):
        self.rows = rows or []
        super().__init__(message)


class IndefiniteCovarianceError(LabError, ValueError):
    """Covariance matrix has an eigenvalue below the PSD tolerance."""

    def __init__(self, min_eigenvalue: float, tolerance: float):
        self.min_eigenvalue = min_eigenvalue
        self.tolerance = tolerance
        super().__init__(
            f"covariance is indefinite: smallest eigenvalue {min_eigenvalue:.3e} "
            f"is below -{tolerance:.0e}"
        )


class NotPolynomialError(LabError, ValueError):
    """Closed-form Gaussian expectation requested for a non-polynomial observable."""
