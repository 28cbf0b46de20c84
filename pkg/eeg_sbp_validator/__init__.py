"""EEG SBP Validator - transport-energy validation of synthetic EEG features.

This package trains a conditional WGAN-GP on baseline-normalized EEG feature
vectors and checks whether synthetic data preserves per-participant
Schrodinger-bridge transport energies between task portions.
"""

__version__ = "1.0.0"
__description__ = "Schrodinger-bridge validation of GAN-synthesized EEG features"

from eeg_sbp_validator.exceptions import (  # noqa: E402
    ComputationFailure,
    EEGSBPError,
    ValidationFailure,
)
from eeg_sbp_validator.models import Dataset, SBPConfig, TaskPortion  # noqa: E402

__all__ = [
    "__version__",
    "__description__",
    "EEGSBPError",
    "ValidationFailure",
    "ComputationFailure",
    "Dataset",
    "SBPConfig",
    "TaskPortion",
]
