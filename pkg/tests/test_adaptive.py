"""Tests for the simulated closed-loop controller."""

import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import kendalltau

from eeg_sbp_validator.adaptive import (
    Decision,
    NonFiniteEnergyError,
    StreamSegment,
    WindowState,
    calibrate_thresholds,
    cohort_stream,
    decide,
    read_stream,
    read_trace,
    replay,
    scripted_stream,
    simulate,
    write_trace,
)
from eeg_sbp_validator.dataset import MissingColumnError, NonFiniteValueError, group
from eeg_sbp_validator.exceptions import DimensionMismatchError, InvalidConfigError
from eeg_sbp_validator.models import (
    ControllerConfig,
    EmpiricalDistribution,
    FeatureSchema,
    SBPConfig,
    TaskPortion,
    WindowConfig,
)
from eeg_sbp_validator.transport import sbp_energy
from tests.utils import gaussian_dataset

HOLD = Decision.HOLD
REDUCE = Decision.REDUCE_CHALLENGE
INCREASE = Decision.INCREASE_CHALLENGE


def gaussian_reference(n: int = 400, dimension: int = 2, seed: int = 0):
    """Standard normal reference cloud."""
    points = np.random.default_rng(seed).standard_normal((n, dimension))
    return EmpiricalDistribution.uniform(points)


class TestWindowState:
    """Test cases for the rolling window."""

    def test_stride_boundaries(self):
        """Test that energies appear at the first full window and every stride."""
        state = WindowState(
            EmpiricalDistribution.uniform(np.linspace(-1.0, 1.0, 5)),
            WindowConfig(capacity=4, stride=2),
            SBPConfig(epsilon=0.5),
        )
        emitted = [
            index
            for index, value in enumerate(np.linspace(0.0, 1.0, 11))
            if state.ingest([value]) is not None
        ]
        assert emitted == [3, 5, 7, 9]
        assert state.ingested == 11
        assert len(state.buffer) == 4

    def test_dimension_checked(self):
        """Test that a sample of the wrong width is refused."""
        state = WindowState(gaussian_reference(10), WindowConfig(capacity=2, stride=1))
        with pytest.raises(DimensionMismatchError):
            state.ingest([1.0, 2.0, 3.0])

    def test_epsilon_pinned_at_first_window(self):
        """Test that an automatic epsilon is chosen once and then kept."""
        reference = gaussian_reference(30, seed=1)
        stream = np.random.default_rng(2).normal(0.5, 1.0, size=(40, 2))
        state = WindowState(reference, WindowConfig(capacity=20, stride=10))
        pinned = []
        for sample in stream:
            if state.ingest(sample) is not None:
                pinned.append(state.sbp.epsilon)
        assert len(pinned) == 3
        assert pinned[0] is not None
        assert pinned == [pinned[0]] * 3

    def test_matches_direct_solve(self):
        """Test that the first window energy equals a direct solve."""
        reference = gaussian_reference(25, seed=3)
        stream = np.random.default_rng(4).normal(size=(15, 2))
        sbp = SBPConfig(epsilon=0.4, tolerance=1e-10)
        state = WindowState(reference, WindowConfig(capacity=15, stride=5), sbp)
        energies = [state.ingest(sample) for sample in stream]
        expected = sbp_energy(EmpiricalDistribution.uniform(stream), reference, sbp)
        assert energies[-1] == pytest.approx(expected.energy, rel=1e-9)

    def test_shifted_copy_energy_offset(self):
        """Test that shifting a copy of the reference adds exactly |delta|^2."""
        points = np.random.default_rng(5).normal(size=(40, 2))
        reference = EmpiricalDistribution.uniform(points)
        delta = np.array([1.5, -0.5])
        sbp = SBPConfig(epsilon=0.5, tolerance=1e-11, max_iterations=50000)
        window = WindowConfig(capacity=40, stride=40)

        def last_energy(stream: np.ndarray) -> float:
            state = WindowState(reference, window, sbp)
            return [state.ingest(sample) for sample in stream][-1]

        offset = last_energy(points + delta) - last_energy(points)
        assert offset == pytest.approx(float(delta @ delta), abs=1e-7)


class TestDecide:
    """Test cases for the threshold controller."""

    @pytest.fixture
    def cfg(self) -> ControllerConfig:
        """Default band 0.25 / 1.5 with h = 0.1 and a cooldown of two."""
        return ControllerConfig(
            theta_low=0.25, theta_high=1.5, hysteresis=0.1, cooldown=2
        )

    def test_entry_needs_hysteresis_margin(self, cfg: ControllerConfig):
        """Test that entering a directional state needs the widened band."""
        assert decide(1.55, None, cfg).decision is HOLD
        assert decide(1.65, None, cfg).decision is REDUCE
        assert decide(0.2, None, cfg).decision is HOLD
        assert decide(0.1, None, cfg).decision is INCREASE

    def test_staying_uses_plain_threshold(self, cfg: ControllerConfig):
        """Test that a directional state persists until the plain threshold."""
        reducing = decide(2.0, None, cfg)
        assert decide(1.55, reducing, cfg).decision is REDUCE
        assert decide(1.45, reducing, cfg).decision is HOLD
        increasing = decide(0.0, None, cfg)
        assert decide(0.2, increasing, cfg).decision is INCREASE
        assert decide(0.3, increasing, cfg).decision is HOLD

    def test_reversal_cooldown(self, cfg: ControllerConfig):
        """Test that an opposite decision waits out the cooldown."""
        trace = replay([2.0, 0.0, 0.0, 0.0], cfg)
        assert [d.decision for d in trace] == [REDUCE, HOLD, HOLD, INCREASE]
        assert [d.since_directional for d in trace] == [0, 1, 2, 0]
        assert trace[2].last_directional is REDUCE

    def test_no_cooldown(self):
        """Test an immediate reversal when the cooldown is zero."""
        cfg = ControllerConfig(cooldown=0)
        assert [d.decision for d in replay([2.0, 0.0], cfg)] == [REDUCE, INCREASE]

    def test_same_direction_not_held_back(self, cfg: ControllerConfig):
        """Test that the cooldown only applies to reversals."""
        trace = replay([2.0, 1.0, 2.0], cfg)
        assert [d.decision for d in trace] == [REDUCE, HOLD, REDUCE]

    @pytest.mark.parametrize("energy", [math.nan, math.inf, -math.inf])
    def test_non_finite_energy(self, cfg: ControllerConfig, energy: float):
        """Test that NaN and infinite energies are refused."""
        with pytest.raises(NonFiniteEnergyError):
            decide(energy, None, cfg)

    def test_band_validated(self):
        """Test that overlapping thresholds are rejected."""
        with pytest.raises(ValueError):
            ControllerConfig(theta_low=1.0, theta_high=1.1, hysteresis=0.1)


class TestReplay:
    """Test cases for replaying recorded energies."""

    def test_indices_carried(self):
        """Test that explicit stream indices end up on the decisions."""
        trace = replay([0.5, 0.6], ControllerConfig(), indices=[199, 249])
        assert [d.index for d in trace] == [199, 249]

    def test_length_mismatch(self):
        """Test that energies and indices must pair up."""
        with pytest.raises(ValueError):
            replay([0.5, 0.6], ControllerConfig(), indices=[1])

    def test_empty(self):
        """Test that no energies give no decisions."""
        assert replay([], ControllerConfig()) == []


class TestCalibrateThresholds:
    """Test cases for threshold calibration."""

    def test_quantile_band(self):
        """Test thresholds at the 20th and 80th percentile."""
        cfg = calibrate_thresholds(np.arange(11.0))
        assert cfg.theta_low == pytest.approx(2.0)
        assert cfg.theta_high == pytest.approx(8.0)
        assert cfg.hysteresis == pytest.approx(0.6)
        assert cfg.cooldown == 2

    @pytest.mark.parametrize(
        "energies",
        [[], [1.0, math.nan, 2.0], [1.0, 1.0, 1.0]],
        ids=["empty", "nan", "degenerate"],
    )
    def test_unusable_energies(self, energies: list[float]):
        """Test that unusable calibration energies are rejected."""
        with pytest.raises(InvalidConfigError):
            calibrate_thresholds(energies)

    def test_bad_arguments(self):
        """Test quantile order and hysteresis fraction checks."""
        with pytest.raises(InvalidConfigError):
            calibrate_thresholds([1.0, 2.0, 3.0], quantiles=(0.8, 0.2))
        with pytest.raises(InvalidConfigError):
            calibrate_thresholds([1.0, 2.0, 3.0], hysteresis_fraction=0.5)


class TestStreams:
    """Test cases for stream generators and the stream file format."""

    def test_scripted_ramp(self):
        """Test that a near-noiseless ramp follows its linear mean."""
        stream = scripted_stream(
            [
                StreamSegment(length=3, start=(0.0, 1.0), scale=1e-9),
                StreamSegment(length=5, start=(0.0, 1.0), end=(4.0, 1.0), scale=1e-9),
            ],
            seed=0,
        )
        assert stream.shape == (8, 2)
        np.testing.assert_allclose(stream[3:, 0], [0.0, 1.0, 2.0, 3.0, 4.0], atol=1e-6)
        np.testing.assert_allclose(stream[:, 1], 1.0, atol=1e-6)

    def test_scripted_seeded(self):
        """Test that the same seed reproduces the stream."""
        segments = [StreamSegment(length=10, start=(0.0,))]
        np.testing.assert_array_equal(
            scripted_stream(segments, seed=3), scripted_stream(segments, seed=3)
        )
        assert scripted_stream([], seed=3).shape == (0, 0)

    def test_scripted_width_checked(self):
        """Test that segments must share a feature width."""
        segments = [
            StreamSegment(length=2, start=(0.0, 0.0)),
            StreamSegment(length=2, start=(0.0,)),
        ]
        with pytest.raises(DimensionMismatchError):
            scripted_stream(segments, seed=0)

    def test_cohort_stream_layout(self):
        """Test dwell and ramp lengths and that dwell rows are real samples."""
        dataset = gaussian_dataset(participants=1, samples=12)
        stream = cohort_stream(dataset, "p01", hold=5, ramp=10, seed=1)
        assert stream.shape == (20, 3)
        first = group(dataset, "p01", TaskPortion.P1)
        last = group(dataset, "p01", TaskPortion.P3)
        for row in stream[:5]:
            assert np.any(np.all(first == row, axis=1))
        for row in stream[-5:]:
            assert np.any(np.all(last == row, axis=1))

    def test_read_stream(self, tmp_path: Path):
        """Test reading selected feature columns."""
        path = tmp_path / "stream.csv"
        path.write_text("# live session\ntheta,alpha,extra\n0.5,1.0,x\n-1.5,2e-1,y\n")
        schema = FeatureSchema(feature_names=("alpha", "theta"))
        expected = [[1.0, 0.5], [0.2, -1.5]]
        np.testing.assert_array_equal(read_stream(path, schema), expected)

    def test_read_stream_errors(self, tmp_path: Path):
        """Test missing columns and non-numeric or non-finite cells."""
        path = tmp_path / "stream.csv"
        path.write_text("theta\n0.5\n")
        with pytest.raises(MissingColumnError):
            read_stream(path, FeatureSchema(feature_names=("theta", "alpha")))
        for bad in ("abc", "nan", "inf"):
            path.write_text(f"theta\n0.5\n{bad}\n")
            with pytest.raises(NonFiniteValueError):
                read_stream(path)


class TestTraceFile:
    """Test cases for the decision trace CSV."""

    def test_round_trip(self, tmp_path: Path):
        """Test that indices, energies and decisions survive a write."""
        trace = replay(
            [0.1, 1.0 / 3.0, 2.0], ControllerConfig(cooldown=0), indices=[199, 249, 299]
        )
        path = tmp_path / "out" / "trace.csv"
        write_trace(trace, path)
        assert path.read_text().splitlines()[0] == "index,energy,decision"
        assert read_trace(path) == [
            (199, 0.1, INCREASE),
            (249, 1.0 / 3.0, HOLD),
            (299, 2.0, REDUCE),
        ]


class TestSimulate:
    """Test cases for end-to-end stream simulation."""

    def test_empty_stream(self, tmp_path: Path):
        """Test that an empty stream yields an empty trace file."""
        path = tmp_path / "trace.csv"
        assert simulate([], gaussian_reference(10), out_path=path) == []
        assert read_trace(path) == []

    def test_baseline_stream_holds(self):
        """Test that a stream drawn like the reference never changes challenge."""
        reference = gaussian_reference(400, seed=6)
        stream = np.random.default_rng(7).standard_normal((600, 2))
        trace = simulate(
            stream,
            reference,
            WindowConfig(capacity=200, stride=50),
            ControllerConfig(theta_low=-1.0, theta_high=3.0, hysteresis=0.1),
            SBPConfig(epsilon=0.5),
        )
        assert len(trace) == 9
        assert [d.index for d in trace] == list(range(199, 600, 50))
        assert all(d.decision is HOLD for d in trace)

    @pytest.mark.slow
    def test_drift_ramp(self, tmp_path: Path):
        """Test rising energy and a single switch to ReduceChallenge under drift."""
        reference = gaussian_reference(400, seed=8)
        stream = scripted_stream(
            [
                StreamSegment(length=200, start=(0.0, 0.0)),
                StreamSegment(length=800, start=(0.0, 0.0), end=(4.0, 0.0)),
                StreamSegment(length=400, start=(4.0, 0.0)),
            ],
            seed=9,
        )
        trace = simulate(
            stream,
            reference,
            WindowConfig(capacity=200, stride=50),
            ControllerConfig(theta_low=-1.0, theta_high=8.0, hysteresis=1.0),
            SBPConfig(epsilon=0.5, tolerance=1e-6),
            out_path=tmp_path / "trace.csv",
        )
        assert len(trace) == 25

        rising = [d.energy for d in trace if d.index < 1200]
        tau, _ = kendalltau(range(len(rising)), rising)
        assert tau > 0.8

        decisions = [d.decision for d in trace]
        switches = list(zip(decisions, decisions[1:]))
        assert decisions[0] is HOLD
        assert switches.count((HOLD, REDUCE)) == 1
        assert decisions[-1] is REDUCE
        assert INCREASE not in decisions
