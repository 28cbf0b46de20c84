"""Simulated closed-loop controller driven by rolling transport energy.

A sliding window over a stream of normalized feature vectors is compared to a
baseline reference cloud every ``stride`` samples. Each fresh energy is turned
into a challenge decision by a threshold controller with hysteresis and a
reversal cooldown.
"""

import math
from collections import deque
from collections.abc import Iterable, Sequence
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # noqa: D101
        __str__ = str.__str__
        __format__ = str.__format__
from itertools import pairwise
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field

from .dataset import MissingColumnError, NonFiniteValueError, group
from .exceptions import ComputationFailure, DimensionMismatchError, InvalidConfigError
from .models import (
    ControllerConfig,
    Dataset,
    EmpiricalDistribution,
    FeatureSchema,
    FloatArray,
    SBPConfig,
    SBPResult,
    TaskPortion,
    WindowConfig,
)
from .transport import cost_matrix, default_epsilon, sbp_energy

TRACE_COLUMNS = ["index", "energy", "decision"]


class NonFiniteEnergyError(ComputationFailure):
    """The controller was handed a NaN or infinite energy."""


class Decision(StrEnum):
    """Challenge adjustment requested from the host system."""

    INCREASE_CHALLENGE = "IncreaseChallenge"
    HOLD = "Hold"
    REDUCE_CHALLENGE = "ReduceChallenge"


class ControlDecision(BaseModel):
    """One controller output.

    Attributes:
        decision: The requested adjustment
        energy: Energy the decision was based on
        index: Zero-based stream index of the sample that triggered it
        last_directional: Most recent non-Hold decision, if any
        since_directional: Decisions since ``last_directional`` (0 when this
            decision is itself directional)
    """

    decision: Decision
    energy: float
    index: int = Field(default=0, ge=0)
    last_directional: Decision | None = None
    since_directional: int = Field(default=0, ge=0)


class WindowState:
    """FIFO window of normalized samples compared against a reference.

    When the solver config has no fixed epsilon, the value chosen for the
    first full window is kept for every later window so energies stay
    comparable and warm starts remain valid.
    """

    def __init__(
        self,
        reference: EmpiricalDistribution,
        window: WindowConfig | None = None,
        sbp: SBPConfig | None = None,
    ):
        """Start with an empty buffer."""
        self.reference = reference
        self.window = window or WindowConfig()
        self.sbp = sbp or SBPConfig()
        self.buffer: deque[FloatArray] = deque(maxlen=self.window.capacity)
        self.ingested = 0
        self.last_result: SBPResult | None = None

    @property
    def dimension(self) -> int:
        """Feature dimension of the reference."""
        return self.reference.dimension

    @property
    def full(self) -> bool:
        """Whether the buffer holds ``capacity`` samples."""
        return len(self.buffer) == self.window.capacity

    def ingest(self, sample: Sequence[float] | FloatArray) -> float | None:
        """Push one sample; return a fresh energy at stride boundaries.

        Raises:
            DimensionMismatchError: If the sample width differs from the reference
        """
        vector = np.asarray(sample, dtype=np.float64).reshape(-1)
        if vector.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"Sample has {vector.size} features, reference has {self.dimension}"
            )
        self.buffer.append(vector)
        self.ingested += 1
        if not self.full or (self.ingested - self.window.capacity) % self.window.stride:
            return None
        return self._solve()

    def _solve(self) -> float:
        window = EmpiricalDistribution.uniform(np.vstack(self.buffer))
        if self.sbp.epsilon is None:
            cost = cost_matrix(window, self.reference)
            epsilon = default_epsilon(cost, self.sbp.epsilon_scale)
            self.sbp = self.sbp.model_copy(update={"epsilon": epsilon})
            logger.debug(f"Pinned window epsilon at {epsilon:.4e}")
        warm_start = None
        if (last := self.last_result) is not None:
            warm_start = (last.source_potential, last.target_potential)
        self.last_result = sbp_energy(window, self.reference, self.sbp, warm_start)
        return self.last_result.energy


def ingest(state: WindowState, sample: Sequence[float] | FloatArray) -> float | None:
    """Functional form of :meth:`WindowState.ingest`."""
    return state.ingest(sample)


def decide(
    energy: float,
    prev: ControlDecision | None,
    cfg: ControllerConfig,
    index: int = 0,
) -> ControlDecision:
    """Threshold decision with hysteresis and reversal cooldown.

    Entering ``ReduceChallenge`` needs ``energy > theta_high + h``; staying in
    it needs ``energy > theta_high``. ``IncreaseChallenge`` mirrors this below
    ``theta_low``. A directional decision opposite to the last one is held
    back for the ``cooldown`` decisions that follow it.

    Raises:
        NonFiniteEnergyError: If ``energy`` is NaN or infinite
    """
    if not math.isfinite(energy):
        raise NonFiniteEnergyError(f"Energy {energy} at index {index} is not finite")
    previous = prev.decision if prev else Decision.HOLD
    high = cfg.theta_high
    if previous is not Decision.REDUCE_CHALLENGE:
        high += cfg.hysteresis
    low = cfg.theta_low
    if previous is not Decision.INCREASE_CHALLENGE:
        low -= cfg.hysteresis
    if energy > high:
        candidate = Decision.REDUCE_CHALLENGE
    elif energy < low:
        candidate = Decision.INCREASE_CHALLENGE
    else:
        candidate = Decision.HOLD

    last = prev.last_directional if prev else None
    since = prev.since_directional + 1 if prev else cfg.cooldown + 1
    if (
        candidate is not Decision.HOLD
        and last is not None
        and candidate is not last
        and since <= cfg.cooldown
    ):
        logger.debug(f"Cooldown holds back {candidate} at index {index}")
        candidate = Decision.HOLD

    if candidate is Decision.HOLD:
        return ControlDecision(
            decision=candidate,
            energy=energy,
            index=index,
            last_directional=last,
            since_directional=since,
        )
    return ControlDecision(
        decision=candidate, energy=energy, index=index, last_directional=candidate
    )


def replay(
    energies: Sequence[float],
    cfg: ControllerConfig,
    indices: Sequence[int] | None = None,
) -> list[ControlDecision]:
    """Run the controller over a recorded energy sequence."""
    positions = list(indices) if indices is not None else list(range(len(energies)))
    trace: list[ControlDecision] = []
    prev: ControlDecision | None = None
    for energy, index in zip(energies, positions, strict=True):
        prev = decide(float(energy), prev, cfg, index)
        trace.append(prev)
    return trace


def calibrate_thresholds(
    energies: Sequence[float],
    quantiles: tuple[float, float] = (0.2, 0.8),
    hysteresis_fraction: float = 0.1,
    cooldown: int = 2,
) -> ControllerConfig:
    """Controller thresholds from the energies of a calibration run.

    The thresholds are the two quantiles of ``energies``; the hysteresis is a
    fraction of the span between them.

    Raises:
        InvalidConfigError: If the energies cannot support a valid band
    """
    values = np.asarray(energies, dtype=np.float64)
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise InvalidConfigError("Calibration needs a non-empty set of finite energies")
    if not 0.0 <= quantiles[0] < quantiles[1] <= 1.0:
        raise InvalidConfigError(
            f"Quantiles must be ordered inside [0, 1], got {quantiles}"
        )
    if not 0.0 <= hysteresis_fraction < 0.5:
        raise InvalidConfigError("hysteresis_fraction must lie in [0, 0.5)")
    low, high = (float(q) for q in np.quantile(values, quantiles))
    if not high > low:
        raise InvalidConfigError(
            f"Calibration energies are degenerate (quantiles {low:.4g} and {high:.4g})"
        )
    cfg = ControllerConfig(
        theta_low=low,
        theta_high=high,
        hysteresis=hysteresis_fraction * (high - low),
        cooldown=cooldown,
    )
    logger.info(
        f"Calibrated thresholds: low={cfg.theta_low:.4g} high={cfg.theta_high:.4g} "
        f"h={cfg.hysteresis:.4g} from {values.size} energies"
    )
    return cfg


class StreamSegment(BaseModel):
    """Gaussian stream segment whose mean moves linearly from start to end.

    Attributes:
        length: Number of samples
        start: Mean of the first sample
        end: Mean of the last sample (defaults to ``start``)
        scale: Per-feature standard deviation
    """

    length: int = Field(..., ge=0)
    start: tuple[float, ...]
    end: tuple[float, ...] | None = None
    scale: float = Field(default=1.0, gt=0.0)


def scripted_stream(segments: Sequence[StreamSegment], seed: int) -> FloatArray:
    """Concatenate scripted Gaussian segments into one ``n x d`` stream.

    Raises:
        DimensionMismatchError: If segment means differ in width
    """
    if not segments:
        return np.empty((0, 0))
    dimension = len(segments[0].start)
    rng = np.random.default_rng(seed)
    blocks: list[FloatArray] = []
    for segment in segments:
        end = segment.end if segment.end is not None else segment.start
        if len(segment.start) != dimension or len(end) != dimension:
            raise DimensionMismatchError(
                f"Stream segments must all have {dimension} features"
            )
        start = np.asarray(segment.start)
        fraction = np.linspace(0.0, 1.0, segment.length)[:, None]
        means = start + fraction * (np.asarray(end) - start)
        noise = rng.standard_normal((segment.length, dimension))
        blocks.append(means + segment.scale * noise)
    return np.vstack(blocks)


def cohort_stream(
    dataset: Dataset,
    participant: str,
    portions: Sequence[TaskPortion] = (TaskPortion.P1, TaskPortion.P3),
    hold: int = 400,
    ramp: int = 800,
    seed: int = 0,
) -> FloatArray:
    """Stream that dwells in each portion and ramps between consecutive ones.

    Samples are redrawn with replacement from the participant's groups. During
    a ramp the chance of drawing from the next portion rises linearly from 0
    to 1.

    Raises:
        EmptyGroupError: If a requested group has no samples
    """
    rng = np.random.default_rng(seed)
    groups = [group(dataset, participant, portion) for portion in portions]

    def draw(source: FloatArray, count: int) -> FloatArray:
        return source[rng.integers(0, source.shape[0], size=count)]

    blocks: list[FloatArray] = []
    for k, current in enumerate(groups):
        blocks.append(draw(current, hold))
        if k + 1 < len(groups):
            mix = np.linspace(0.0, 1.0, ramp)
            take_next = rng.random(ramp) < mix
            block = draw(current, ramp)
            block[take_next] = draw(groups[k + 1], int(take_next.sum()))
            blocks.append(block)
    return np.vstack(blocks) if blocks else np.empty((0, dataset.dimension))


def read_stream(path: Path | str, schema: FeatureSchema | None = None) -> FloatArray:
    """Read a stream CSV holding only feature columns.

    Raises:
        MissingColumnError: If a schema column is absent
        NonFiniteValueError: If a value is not a finite number
    """
    frame = pd.read_csv(Path(path), comment="#", dtype=str, keep_default_na=False)
    columns = list(schema.feature_names) if schema else list(frame.columns)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MissingColumnError(f"{path}: missing feature columns {missing}")
    values = np.empty((len(frame), len(columns)))
    for j, column in enumerate(columns):
        for i, text in enumerate(frame[column]):
            try:
                values[i, j] = float(text)
            except ValueError as e:
                raise NonFiniteValueError(
                    f"{path}: row {i + 1}, column '{column}' is not a number: {text!r}"
                ) from e
            if not math.isfinite(values[i, j]):
                raise NonFiniteValueError(
                    f"{path}: row {i + 1}, column '{column}' is {text}"
                )
    return values


def write_trace(trace: Sequence[ControlDecision], path: Path | str) -> None:
    """Write ``index,energy,decision`` CSV."""
    rows = [[d.index, repr(d.energy), d.decision.value] for d in trace]
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(file_path, index=False)


def read_trace(path: Path | str) -> list[tuple[int, float, Decision]]:
    """Read ``(index, energy, decision)`` rows of a trace CSV."""
    frame = pd.read_csv(Path(path), float_precision="round_trip")
    return [
        (int(row["index"]), float(row["energy"]), Decision(row["decision"]))
        for row in frame.to_dict(orient="records")
    ]


def simulate(
    stream: Iterable[Sequence[float] | FloatArray],
    reference: EmpiricalDistribution,
    window: WindowConfig | None = None,
    controller: ControllerConfig | None = None,
    sbp: SBPConfig | None = None,
    out_path: Path | str | None = None,
) -> list[ControlDecision]:
    """Feed a stream through the window and controller.

    Returns:
        One decision per energy, in stream order; empty for an empty stream
    """
    state = WindowState(reference, window, sbp)
    cfg = controller or ControllerConfig()
    trace: list[ControlDecision] = []
    prev: ControlDecision | None = None
    for index, sample in enumerate(stream):
        energy = state.ingest(sample)
        if energy is None:
            continue
        prev = decide(energy, prev, cfg, index)
        trace.append(prev)
    switches = sum(1 for a, b in pairwise(trace) if a.decision is not b.decision)
    logger.info(
        f"Simulated {state.ingested} samples: "
        f"{len(trace)} decisions, {switches} switches"
    )
    if out_path is not None:
        write_trace(trace, out_path)
    return trace


__all__ = [
    "TRACE_COLUMNS",
    "NonFiniteEnergyError",
    "Decision",
    "ControlDecision",
    "WindowState",
    "ingest",
    "decide",
    "replay",
    "calibrate_thresholds",
    "StreamSegment",
    "scripted_stream",
    "cohort_stream",
    "read_stream",
    "write_trace",
    "read_trace",
    "simulate",
]
