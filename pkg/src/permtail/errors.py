"""Exception hierarchy."""
from __future__ import annotations


class PermTailError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(PermTailError, ValueError):
    """Distribution parameters or arguments outside their domain."""


class ConfigurationError(PermTailError, ValueError):
    """Invalid or inconsistent configuration."""


class UnsupportedCombinationError(ConfigurationError):
    """An estimator was asked for something it cannot do (MOM + constraint)."""


class DegenerateDistributionError(PermTailError):
    """Permutation distribution without spread."""


class EstimationError(PermTailError):
    """A GPD estimator failed to converge.

    Attributes:
        method: name of the estimator.
        diagnostics: free-form details (iterations, residual, bracket).
    """

    def __init__(self, message: str, method: str, diagnostics: dict | None = None):
        super().__init__(f"{method}: {message}")
        self.method = method
        self.diagnostics = dict(diagnostics or {})


class InputFormatError(PermTailError, ValueError):
    """Malformed statistics file; message carries path, line and column."""
