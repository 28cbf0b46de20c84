"""Shared builders and reference values for the EEG SBP validator tests."""

from collections.abc import Callable, Mapping

import numpy as np
import pandas as pd
from scipy.stats import norm

from eeg_sbp_validator.models import (
    Dataset,
    FeatureSchema,
    SampleSpace,
    TaskPortion,
)

FEATURES = ("theta", "alpha", "engagement")

# Per-participant transport energies reported for real recordings and for
# GAN output, ten participants each.
REFERENCE_REAL_ENERGIES = {
    "P1->P2": [
        0.000391, 0.000518, 0.000725, 0.000692, 0.000790,
        0.000508, 0.000686, 0.000544, 0.000695, 0.000858,
    ],
    "P1->P3": [
        0.000491, 0.000549, 0.000740, 0.000907, 0.001063,
        0.000835, 0.000556, 0.000443, 0.000694, 0.002588,
    ],
}
REFERENCE_SYNTHETIC_ENERGIES = {
    "P1->P2": [
        0.000845, 0.000860, 0.000558, 0.000753, 0.000581,
        0.000951, 0.000693, 0.001016, 0.000740, 0.000768,
    ],
    "P1->P3": [
        0.000885, 0.001127, 0.000951, 0.000932, 0.000830,
        0.000948, 0.000741, 0.000836, 0.000830, 0.000779,
    ],
}


def energy_frame(columns: Mapping[str, list[float]], prefix: str = "p") -> pd.DataFrame:
    """Energy table indexed by ``p01, p02, ...``."""
    size = len(next(iter(columns.values())))
    labels = [f"{prefix}{k + 1:02d}" for k in range(size)]
    index = pd.Index(labels, name="participant_id")
    return pd.DataFrame(dict(columns), index=index)


def make_dataset(
    groups: Mapping[tuple[str, TaskPortion], np.ndarray],
    feature_names: tuple[str, ...] | None = None,
    space: SampleSpace = SampleSpace.RAW,
) -> Dataset:
    """Dataset with the given ``(participant, portion) -> rows`` groups in order."""
    participant_ids: list[str] = []
    portions: list[TaskPortion] = []
    blocks: list[np.ndarray] = []
    for (pid, portion), rows in groups.items():
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        blocks.append(rows)
        participant_ids.extend([pid] * rows.shape[0])
        portions.extend([portion] * rows.shape[0])
    width = blocks[0].shape[1]
    names = feature_names or tuple(f"f{j}" for j in range(width))
    return Dataset(
        feature_schema=FeatureSchema(feature_names=names),
        participant_ids=tuple(participant_ids),
        portions=tuple(portions),
        features=np.vstack(blocks),
        space=space,
    )


def gaussian_dataset(
    participants: int = 3,
    samples: int = 30,
    portions: tuple[TaskPortion, ...] = (
        TaskPortion.P1,
        TaskPortion.P2,
        TaskPortion.P3,
    ),
    seed: int = 0,
    space: SampleSpace = SampleSpace.RAW,
) -> Dataset:
    """Small three-feature dataset; portion ``k`` is shifted by ``0.5 * k``."""
    rng = np.random.default_rng(seed)
    groups: dict[tuple[str, TaskPortion], np.ndarray] = {}
    for p in range(participants):
        offset = rng.uniform(-2.0, 2.0, size=len(FEATURES))
        for portion in portions:
            groups[(f"p{p + 1:02d}", portion)] = rng.normal(
                offset + 0.5 * portion.index, 1.0, size=(samples, len(FEATURES))
            )
    return make_dataset(groups, FEATURES, space)


def stratified_normal(n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """``n x 1`` normal quantiles at ``(i + 0.5) / n``."""
    return (mean + std * norm.ppf((np.arange(n) + 0.5) / n)).reshape(-1, 1)


def central_difference(
    func: Callable[[], float], array: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Numerical gradient of ``func`` with respect to ``array``, modified in place."""
    gradient = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + step
        upper = func()
        array[index] = original - step
        lower = func()
        array[index] = original
        gradient[index] = (upper - lower) / (2.0 * step)
    return gradient
