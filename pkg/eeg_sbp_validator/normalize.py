"""Baseline-referenced normalization.

Every participant's features are z-scored against the mean and population
standard deviation of their own baseline portion, then clipped to a fixed
range. The inverse maps normalized (real or generated) features back to raw
units with the same participant's statistics.
"""

from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from .dataset import EmptyGroupError, MissingColumnError, group
from .exceptions import DimensionMismatchError, ValidationFailure
from .models import (
    BaselineStats,
    ClipRange,
    Dataset,
    FloatArray,
    SampleSpace,
    TaskPortion,
)


class SpaceMismatchError(ValidationFailure):
    """A dataset is in the wrong space for the requested transform."""


def compute_baseline(
    dataset: Dataset,
    participant: str,
    baseline_portion: TaskPortion = TaskPortion.P1,
    eps: float = 1e-6,
) -> BaselineStats:
    """Baseline mean and population std of one participant.

    Args:
        dataset: Raw-space dataset
        participant: Participant identifier
        baseline_portion: Portion used as reference
        eps: Stability constant stored with the statistics

    Returns:
        The participant's baseline statistics

    Raises:
        SpaceMismatchError: If the dataset is already normalized
        EmptyGroupError: If the participant has no baseline samples
    """
    if dataset.space != SampleSpace.RAW:
        raise SpaceMismatchError("Baselines are computed from raw-space datasets")
    try:
        values = group(dataset, participant, baseline_portion)
    except EmptyGroupError as e:
        raise EmptyGroupError(
            f"Participant '{participant}' has no "
            f"{baseline_portion.value} baseline samples"
        ) from e
    return BaselineStats(
        participant_id=participant,
        mu=tuple(float(x) for x in values.mean(axis=0)),
        sigma=tuple(float(x) for x in values.std(axis=0, ddof=0)),
        eps=eps,
        baseline_portion=baseline_portion,
    )


def _check_width(values: FloatArray, stats: BaselineStats) -> None:
    if values.shape[-1] != len(stats.mu):
        raise DimensionMismatchError(
            f"Feature width {values.shape[-1]} does not match baseline width "
            f"{len(stats.mu)} for participant '{stats.participant_id}'"
        )


def apply(
    x: FloatArray, stats: BaselineStats, clip: ClipRange | None = None
) -> FloatArray:
    """Normalize raw features with a participant's baseline and clip.

    Accepts a single vector or an ``n x d`` matrix of rows.

    Raises:
        DimensionMismatchError: If the width differs from the baseline's
    """
    clip = clip or ClipRange()
    values = np.asarray(x, dtype=np.float64)
    _check_width(values, stats)
    z = (values - stats.mu_array) / stats.scale_array
    return np.clip(z, clip.lo, clip.hi)


def invert(x_norm: FloatArray, stats: BaselineStats) -> FloatArray:
    """Map normalized features back to raw units.

    Raises:
        DimensionMismatchError: If the width differs from the baseline's
    """
    values = np.asarray(x_norm, dtype=np.float64)
    _check_width(values, stats)
    return values * stats.scale_array + stats.mu_array


def normalize_dataset(
    dataset: Dataset,
    baseline_portion: TaskPortion = TaskPortion.P1,
    eps: float = 1e-6,
    clip: ClipRange | None = None,
) -> tuple[Dataset, dict[str, BaselineStats]]:
    """Normalize every sample with its own participant's baseline.

    Returns:
        The normalized dataset and the statistics per participant

    Raises:
        EmptyGroupError: Naming the first participant without baseline samples
    """
    clip = clip or ClipRange()
    logger.info(
        f"Normalizing {len(dataset)} samples against {baseline_portion.value} "
        f"(eps={eps}, clip=[{clip.lo}, {clip.hi}])"
    )
    stats: dict[str, BaselineStats] = {}
    features = np.empty_like(dataset.features)
    for participant in dataset.participants():
        stats[participant] = compute_baseline(
            dataset, participant, baseline_portion, eps
        )
        mask = dataset.row_mask(participant)
        features[mask] = apply(dataset.features[mask], stats[participant], clip)

    clipped = int(np.count_nonzero((features <= clip.lo) | (features >= clip.hi)))
    if clipped:
        logger.debug(f"{clipped} normalized values at the clip bounds")

    normalized = Dataset(
        feature_schema=dataset.feature_schema,
        participant_ids=dataset.participant_ids,
        portions=dataset.portions,
        features=features,
        space=SampleSpace.NORMALIZED,
    )
    return normalized, stats


def invert_dataset(dataset: Dataset, stats: dict[str, BaselineStats]) -> Dataset:
    """Map a normalized dataset back to raw units participant by participant.

    Raises:
        SpaceMismatchError: If the dataset is not normalized
        EmptyGroupError: If a participant has no statistics
    """
    if dataset.space != SampleSpace.NORMALIZED:
        raise SpaceMismatchError("Only normalized datasets can be inverted")
    features = np.empty_like(dataset.features)
    for participant in dataset.participants():
        if participant not in stats:
            raise EmptyGroupError(
                f"No baseline statistics for participant '{participant}'"
            )
        mask = dataset.row_mask(participant)
        features[mask] = invert(dataset.features[mask], stats[participant])
    return Dataset(
        feature_schema=dataset.feature_schema,
        participant_ids=dataset.participant_ids,
        portions=dataset.portions,
        features=features,
        space=SampleSpace.RAW,
    )


def save_baseline_stats(
    stats: dict[str, BaselineStats], feature_names: tuple[str, ...], path: Path | str
) -> None:
    """Write baseline statistics as ``participant_id,mu_*,sigma_*`` CSV.

    ``eps`` and the baseline portion are written as trailing columns so the
    file alone reproduces the normalization.
    """
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    header = [
        "participant_id",
        *(f"mu_{name}" for name in feature_names),
        *(f"sigma_{name}" for name in feature_names),
        "eps",
        "baseline_portion",
    ]
    lines = [",".join(header)]
    for participant, entry in stats.items():
        if len(entry.mu) != len(feature_names):
            raise DimensionMismatchError(
                f"Statistics for '{participant}' have width {len(entry.mu)}, "
                f"expected {len(feature_names)}"
            )
        cells = [
            participant,
            *(repr(v) for v in entry.mu),
            *(repr(v) for v in entry.sigma),
            repr(entry.eps),
            entry.baseline_portion.value,
        ]
        lines.append(",".join(cells))
    file_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(
        f"Wrote baseline statistics for {len(stats)} participants to {file_path}"
    )


def load_baseline_stats(
    path: Path | str, feature_names: tuple[str, ...]
) -> dict[str, BaselineStats]:
    """Read statistics written by :func:`save_baseline_stats`.

    Raises:
        MissingColumnError: If a ``mu_*``/``sigma_*`` column is absent
    """
    frame = pd.read_csv(
        Path(path),
        dtype={"participant_id": str, "baseline_portion": str},
        float_precision="round_trip",
        comment="#",
    )
    mu_columns = [f"mu_{name}" for name in feature_names]
    sigma_columns = [f"sigma_{name}" for name in feature_names]
    for column in ["participant_id", *mu_columns, *sigma_columns]:
        if column not in frame.columns:
            raise MissingColumnError(f"Baseline file is missing column '{column}'")

    stats: dict[str, BaselineStats] = {}
    for _, row in frame.iterrows():
        participant = str(row["participant_id"])
        eps = float(row["eps"]) if "eps" in frame.columns else 1e-6
        portion = (
            TaskPortion(str(row["baseline_portion"]))
            if "baseline_portion" in frame.columns
            else TaskPortion.P1
        )
        stats[participant] = BaselineStats(
            participant_id=participant,
            mu=tuple(float(row[c]) for c in mu_columns),
            sigma=tuple(float(row[c]) for c in sigma_columns),
            eps=eps,
            baseline_portion=portion,
        )
    return stats


__all__ = [
    "SpaceMismatchError",
    "compute_baseline",
    "apply",
    "invert",
    "normalize_dataset",
    "invert_dataset",
    "save_baseline_stats",
    "load_baseline_stats",
]
