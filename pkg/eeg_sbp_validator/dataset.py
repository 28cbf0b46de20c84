"""Loading, validating and grouping tabular EEG-feature recordings.

The on-disk format is comma-separated UTF-8 text with the header
``participant_id,task_portion,<feature names...>``, one sample per line.
Blank lines and lines starting with ``#`` are ignored.
"""

from io import StringIO
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from loguru import logger

from .exceptions import ValidationFailure
from .models import (
    Dataset,
    FeatureSchema,
    FeatureStatistics,
    FloatArray,
    SampleSpace,
    TaskPortion,
)

ID_COLUMNS = ("participant_id", "task_portion")


class DataModelError(ValidationFailure):
    """Base exception for dataset loading and grouping errors."""


class MissingColumnError(DataModelError):
    """A required column is absent from the header."""


class NonFiniteValueError(DataModelError):
    """A feature cell is NaN, infinite or not a number."""


class UnknownPortionError(DataModelError):
    """A task portion label is outside P1-P4."""


class EmptyFileError(DataModelError):
    """The file has no header or no data rows."""


class EmptyGroupError(DataModelError):
    """No samples match the requested participant/portion selection."""


class SchemaMismatchError(DataModelError):
    """Two datasets do not share a feature schema or space."""


def load_dataset(
    path: Path | str,
    schema: FeatureSchema | None = None,
    space: SampleSpace = SampleSpace.RAW,
) -> Dataset:
    """Load a dataset from CSV.

    The file does not record its space; callers reading normalized or
    synthetic data pass ``space=SampleSpace.NORMALIZED``.

    Args:
        path: CSV file with a ``participant_id,task_portion,...`` header
        schema: Expected features; inferred from the header when omitted
        space: Space the values are in

    Returns:
        Dataset in ``space``, rows in file order

    Raises:
        EmptyFileError: If the file has no header or no data rows
        MissingColumnError: If a required column is absent
        UnknownPortionError: If a portion label is not P1-P4
        NonFiniteValueError: If a feature cell is not a finite number
    """
    file_path = Path(path)
    logger.info(f"Loading dataset from {file_path}")

    lines = file_path.read_text(encoding="utf-8").splitlines(keepends=True)
    # Only whole-line comments; '#' inside a cell is data.
    body = "".join(line for line in lines if not line.lstrip().startswith("#"))
    try:
        frame = pd.read_csv(
            StringIO(body),
            skip_blank_lines=True,
            dtype=str,
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError as e:
        raise EmptyFileError(f"{file_path} is empty") from e

    frame.columns = [str(column).strip() for column in frame.columns]
    for column in ID_COLUMNS:
        if column not in frame.columns:
            raise MissingColumnError(
                f"Required column '{column}' missing in {file_path}"
            )

    if schema is None:
        feature_columns = [c for c in frame.columns if c not in ID_COLUMNS]
        if not feature_columns:
            raise MissingColumnError(f"No feature columns in {file_path}")
        schema = FeatureSchema(feature_names=tuple(feature_columns))
    else:
        for name in schema.feature_names:
            if name not in frame.columns:
                raise MissingColumnError(
                    f"Feature column '{name}' missing in {file_path}"
                )

    if frame.empty:
        raise EmptyFileError(f"{file_path} has a header but no data rows")

    portions: list[TaskPortion] = []
    for row_number, label in enumerate(frame["task_portion"], start=1):
        try:
            portions.append(TaskPortion(label.strip()))
        except ValueError as e:
            raise UnknownPortionError(
                f"Row {row_number}: unknown task portion '{label}' (expected P1-P4)"
            ) from e

    features = np.empty((len(frame), schema.dimension), dtype=np.float64)
    for j, name in enumerate(schema.feature_names):
        for i, cell in enumerate(frame[name]):
            try:
                value = float(cell)
            except ValueError as e:
                raise NonFiniteValueError(
                    f"Row {i + 1}, column '{name}': '{cell}' is not a number"
                ) from e
            if not np.isfinite(value):
                raise NonFiniteValueError(
                    f"Row {i + 1}, column '{name}': non-finite value '{cell}'"
                )
            features[i, j] = value

    participant_ids = tuple(pid.strip() for pid in frame["participant_id"])
    if any(not pid for pid in participant_ids):
        raise MissingColumnError(f"Empty participant_id in {file_path}")

    dataset = Dataset(
        feature_schema=schema,
        participant_ids=participant_ids,
        portions=tuple(portions),
        features=features,
        space=space,
    )
    logger.info(
        f"Loaded {len(dataset)} samples, d={schema.dimension}, "
        f"{len(dataset.participants())} participants"
    )
    return dataset


def write_dataset(dataset: Dataset, path: Path | str) -> None:
    """Write a dataset in the CSV format read by :func:`load_dataset`.

    Floats are written with shortest round-trip ``repr`` so that reloading
    reproduces the feature matrix bit for bit.
    """
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join([*ID_COLUMNS, *dataset.feature_schema.feature_names])
    lines = [header]
    for pid, portion, row in zip(
        dataset.participant_ids, dataset.portions, dataset.features, strict=True
    ):
        values = ",".join(repr(float(x)) for x in row)
        lines.append(f"{pid},{portion.value},{values}")
    file_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {len(dataset)} samples to {file_path}")


def group(dataset: Dataset, participant: str, portion: TaskPortion) -> FloatArray:
    """Feature vectors of one participant and task portion, in file order.

    Raises:
        EmptyGroupError: If no samples match
    """
    mask = dataset.row_mask(participant, portion)
    if not mask.any():
        raise EmptyGroupError(
            f"No samples for participant '{participant}' in portion {portion.value}"
        )
    return dataset.features[mask]


def feature_statistics(
    dataset: Dataset,
    selector: tuple[str, TaskPortion] | Literal["all"] = "all",
) -> FeatureStatistics:
    """Per-feature mean and population standard deviation.

    Args:
        dataset: Dataset to summarize
        selector: ``(participant, portion)`` for one group or ``"all"``

    Raises:
        EmptyGroupError: If the selection is empty
    """
    if selector == "all":
        values = dataset.features
        if values.shape[0] == 0:
            raise EmptyGroupError("Dataset has no samples")
    else:
        values = group(dataset, selector[0], selector[1])
    return summarize(values)


def summarize(values: FloatArray) -> FeatureStatistics:
    """Mean and population std (divide by n) of the rows of ``values``."""
    if values.shape[0] == 0:
        raise EmptyGroupError("Cannot summarize an empty selection")
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=0)
    return FeatureStatistics(
        mean=tuple(float(x) for x in mean),
        std=tuple(float(x) for x in std),
        count=int(values.shape[0]),
    )


def concat(first: Dataset, second: Dataset) -> Dataset:
    """Append the rows of ``second`` after those of ``first``.

    Raises:
        SchemaMismatchError: If schemas or space tags differ
    """
    if first.feature_schema != second.feature_schema:
        raise SchemaMismatchError("Datasets have different feature schemas")
    if first.space != second.space:
        raise SchemaMismatchError("Datasets are in different spaces")
    return Dataset(
        feature_schema=first.feature_schema,
        participant_ids=first.participant_ids + second.participant_ids,
        portions=first.portions + second.portions,
        features=np.vstack([first.features, second.features]),
        space=first.space,
    )


__all__ = [
    "DataModelError",
    "MissingColumnError",
    "NonFiniteValueError",
    "UnknownPortionError",
    "EmptyFileError",
    "EmptyGroupError",
    "SchemaMismatchError",
    "load_dataset",
    "write_dataset",
    "group",
    "feature_statistics",
    "summarize",
    "concat",
]
