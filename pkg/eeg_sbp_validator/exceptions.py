"""Exception hierarchy shared across the EEG SBP validator.

Module-specific errors live next to the code that raises them; this module only
holds the roots that the command-line layer maps to exit codes, plus the few
leaf errors raised by more than one module.
"""


class EEGSBPError(Exception):
    """Base exception for all validator errors."""


class ValidationFailure(EEGSBPError):
    """Input data or configuration failed validation."""


class ComputationFailure(EEGSBPError):
    """A numerical stage failed at runtime."""


class DimensionMismatchError(ValidationFailure):
    """Vector or matrix dimensions do not agree."""


class InvalidConfigError(ValidationFailure):
    """A configuration value or file is invalid."""


__all__ = [
    "EEGSBPError",
    "ValidationFailure",
    "ComputationFailure",
    "DimensionMismatchError",
    "InvalidConfigError",
]
