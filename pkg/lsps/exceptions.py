"""Error hierarchy for the LSPS engine.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional, Union


class LspsError(Exception):
    """Base class for all engine errors."""

    exit_code = 70


class ConfigError(LspsError):
    """Unparseable, unreadable or invalid configuration."""

    exit_code = 64


class DataValidationError(LspsError, ValueError):
    """Cohort data violates the input contract."""

    exit_code = 65

    def __init__(
        self,
        message: str,
        row: Optional[Union[int, str]] = None,
        column: Optional[str] = None,
    ):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class DimensionMismatchError(ValueError):
    """Covariate width does not match a fitted model."""


class NumericalError(LspsError):
    """A numerical procedure failed."""

    exit_code = 70


class ConvergenceError(NumericalError):
    """An iterative solver did not reach its tolerance."""


class SeparationError(NumericalError):
    """Logistic coefficients exceeded the guard bound (complete separation)."""


class NonIdentifiableError(NumericalError):
    """Cox model has no treatment contrast or a monotone likelihood."""


class ZeroEventsError(NumericalError):
    """Cox model was given no events."""


class DegenerateStratumError(NumericalError):
    """A stratum lacks treated or control subjects."""


class AllStrataDegenerateError(NumericalError):
    """No stratum contains both treatment groups."""


class CrossValidationError(NumericalError):
    """A cross-validation fold contains a single treatment class."""


class ConstantTargetError(NumericalError):
    """R-squared requested for a constant target."""
