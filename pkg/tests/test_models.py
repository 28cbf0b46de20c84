"""Unit tests for the Pydantic data models.

This module covers construction, validation and the small helper methods of
the shared domain types.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from eeg_sbp_validator.models import (
    BaselineStats,
    ClipRange,
    ComparisonReport,
    ControllerConfig,
    Dataset,
    DenseLayerSpec,
    EmpiricalDistribution,
    FeatureSchema,
    MlpSpec,
    NormalizeConfig,
    Sample,
    SampleSpace,
    TaskPortion,
    TrainingLog,
    TrainingRecord,
    TransportPlan,
    VirtualCohortConfig,
    parse_transition,
    transition_label,
)


class TestTaskPortion:
    """Test cases for portion labels and transitions."""

    def test_ordinal_index(self):
        """Test that portions are ordered P1 < P2 < P3 < P4."""
        assert [p.index for p in TaskPortion] == [0, 1, 2, 3]

    @pytest.mark.parametrize("text", ["P1:P3", "P1->P3", " P1 : P3 "])
    def test_parse_transition(self, text: str):
        """Test both accepted transition spellings."""
        assert parse_transition(text) == (TaskPortion.P1, TaskPortion.P3)

    @pytest.mark.parametrize("text", ["P1", "P1:P5", "P1:P2:P3", ""])
    def test_parse_transition_invalid(self, text: str):
        """Test that malformed transitions are rejected."""
        with pytest.raises(ValueError):
            parse_transition(text)

    def test_transition_label(self):
        """Test the canonical label format."""
        assert transition_label((TaskPortion.P1, TaskPortion.P2)) == "P1->P2"


class TestFeatureSchema:
    """Test cases for FeatureSchema."""

    def test_dimension(self):
        """Test that the dimension is the number of names."""
        schema = FeatureSchema(feature_names=("theta", "alpha", "engagement"))
        assert schema.dimension == 3

    def test_names_are_stripped(self):
        """Test whitespace cleaning of names."""
        schema = FeatureSchema(feature_names=(" theta ", "alpha"))
        assert schema.feature_names == ("theta", "alpha")

    @pytest.mark.parametrize("names", [(), ("theta", "theta"), ("theta", "  ")])
    def test_invalid_names(self, names: tuple[str, ...]):
        """Test empty, duplicate and blank names."""
        with pytest.raises(ValidationError):
            FeatureSchema(feature_names=names)


class TestSample:
    """Test cases for Sample."""

    def test_valid_sample(self):
        """Test a plain raw-space sample."""
        sample = Sample(
            participant_id="p01", task_portion=TaskPortion.P2, features=(1.0, 2.0)
        )
        assert sample.space == SampleSpace.RAW
        assert sample.task_portion == TaskPortion.P2

    @pytest.mark.parametrize("value", [float("nan"), float("inf")])
    def test_non_finite_rejected(self, value: float):
        """Test that NaN and infinity are rejected."""
        with pytest.raises(ValidationError):
            Sample(participant_id="p01", task_portion=TaskPortion.P1, features=(value,))

    def test_empty_participant_rejected(self):
        """Test that a participant id is required."""
        with pytest.raises(ValidationError):
            Sample(participant_id="", task_portion=TaskPortion.P1, features=(1.0,))


class TestDataset:
    """Test cases for the column-oriented Dataset."""

    @pytest.fixture
    def dataset(self) -> Dataset:
        """Two participants, two portions, two rows each."""
        return Dataset(
            feature_schema=FeatureSchema(feature_names=("a", "b")),
            participant_ids=("p02", "p02", "p01", "p01", "p02", "p02", "p01", "p01"),
            portions=(TaskPortion.P1,) * 4 + (TaskPortion.P3,) * 4,
            features=np.arange(16, dtype=float).reshape(8, 2),
        )

    def test_participants_first_appearance_order(self, dataset: Dataset):
        """Test that participants keep file order, not sorted order."""
        assert dataset.participants() == ["p02", "p01"]

    def test_portions_present(self, dataset: Dataset):
        """Test that portions come back in ordinal order."""
        assert dataset.portions_present() == [TaskPortion.P1, TaskPortion.P3]

    def test_row_mask(self, dataset: Dataset):
        """Test selecting one group."""
        mask = dataset.row_mask("p01", TaskPortion.P3)
        assert mask.tolist() == [False] * 6 + [True, True]

    def test_features_read_only(self, dataset: Dataset):
        """Test that the feature matrix cannot be modified in place."""
        with pytest.raises(ValueError):
            dataset.features[0, 0] = 99.0

    def test_samples_round_trip(self, dataset: Dataset):
        """Test materializing samples and rebuilding the dataset."""
        rebuilt = Dataset.from_samples(dataset.feature_schema, dataset.samples)
        np.testing.assert_array_equal(rebuilt.features, dataset.features)
        assert rebuilt.participant_ids == dataset.participant_ids

    def test_width_mismatch(self):
        """Test that the matrix width must match the schema."""
        with pytest.raises(ValidationError):
            Dataset(
                feature_schema=FeatureSchema(feature_names=("a", "b")),
                participant_ids=("p01",),
                portions=(TaskPortion.P1,),
                features=np.zeros((1, 3)),
            )

    def test_length_mismatch(self):
        """Test that tag columns must match the row count."""
        with pytest.raises(ValidationError):
            Dataset(
                feature_schema=FeatureSchema(feature_names=("a",)),
                participant_ids=("p01", "p01"),
                portions=(TaskPortion.P1,),
                features=np.zeros((2, 1)),
            )

    def test_mixed_space_samples_rejected(self):
        """Test that from_samples refuses samples from another space."""
        sample = Sample(
            participant_id="p01",
            task_portion=TaskPortion.P1,
            features=(1.0,),
            space=SampleSpace.NORMALIZED,
        )
        with pytest.raises(ValueError):
            Dataset.from_samples(FeatureSchema(feature_names=("a",)), [sample])


class TestNormalizationModels:
    """Test cases for clip ranges and baseline statistics."""

    def test_clip_order(self):
        """Test that lo must be below hi."""
        with pytest.raises(ValidationError):
            ClipRange(lo=1.0, hi=1.0)

    def test_normalize_config_clip(self):
        """Test the derived clip range."""
        assert NormalizeConfig(clip_lo=-3, clip_hi=3).clip == ClipRange(lo=-3, hi=3)

    def test_eps_must_be_positive(self):
        """Test that a zero stability constant is rejected."""
        with pytest.raises(ValidationError):
            NormalizeConfig(eps=0.0)

    def test_baseline_scale(self):
        """Test that the scale is sigma plus eps."""
        stats = BaselineStats(
            participant_id="p01", mu=(1.0, 2.0), sigma=(0.5, 0.0), eps=0.25
        )
        np.testing.assert_allclose(stats.scale_array, [0.75, 0.25])

    def test_negative_sigma_rejected(self):
        """Test that sigma must be non-negative."""
        with pytest.raises(ValidationError):
            BaselineStats(participant_id="p01", mu=(0.0,), sigma=(-1.0,))


class TestTransportModels:
    """Test cases for empirical distributions and transport plans."""

    def test_uniform_weights(self):
        """Test uniform construction from a vector."""
        dist = EmpiricalDistribution.uniform([1.0, 2.0, 3.0, 4.0])
        assert dist.size == 4
        assert dist.dimension == 1
        np.testing.assert_allclose(dist.weights, 0.25)

    def test_weights_must_sum_to_one(self):
        """Test the simplex constraint."""
        with pytest.raises(ValidationError):
            EmpiricalDistribution(points=np.zeros((2, 1)), weights=np.array([0.5, 0.6]))

    def test_empty_support_rejected(self):
        """Test that at least one point is needed."""
        with pytest.raises(ValidationError):
            EmpiricalDistribution(points=np.zeros((0, 2)), weights=np.zeros(0))

    def test_pruned_drops_zero_weights(self):
        """Test pruning and renormalization."""
        dist = EmpiricalDistribution(
            points=np.array([[0.0], [1.0], [2.0]]), weights=np.array([0.5, 0.0, 0.5])
        )
        pruned = dist.pruned()
        np.testing.assert_array_equal(pruned.points, [[0.0], [2.0]])
        np.testing.assert_allclose(pruned.weights, [0.5, 0.5])

    def test_marginal_error(self):
        """Test the L1 marginal violation of a plan."""
        plan = TransportPlan(
            coupling=np.array([[0.5, 0.0], [0.0, 0.4]]),
            source_marginal=np.array([0.5, 0.5]),
            target_marginal=np.array([0.5, 0.5]),
        )
        assert plan.marginal_error() == pytest.approx(0.1)

    def test_negative_coupling_rejected(self):
        """Test that couplings are non-negative."""
        with pytest.raises(ValidationError):
            TransportPlan(
                coupling=np.array([[-0.1]]),
                source_marginal=np.array([1.0]),
                target_marginal=np.array([1.0]),
            )


class TestNetworkModels:
    """Test cases for MLP layouts."""

    def test_residual_block_widths(self):
        """Test that a block must preserve its width."""
        hidden = DenseLayerSpec(width=4)
        spec = MlpSpec(
            input_width=3, layers=(hidden, hidden, hidden), residual_blocks=((1, 3),)
        )
        assert spec.output_width == 4
        with pytest.raises(ValidationError):
            MlpSpec(input_width=3, layers=(hidden, hidden), residual_blocks=((0, 2),))

    def test_overlapping_blocks_rejected(self):
        """Test that blocks may not overlap."""
        hidden = DenseLayerSpec(width=4)
        with pytest.raises(ValidationError):
            MlpSpec(
                input_width=4,
                layers=(hidden,) * 4,
                residual_blocks=((0, 2), (1, 3)),
            )


class TestTrainingLog:
    """Test cases for TrainingLog series."""

    def test_series_filter_by_kind(self):
        """Test that series contain only critic records."""
        log = TrainingLog()
        for record in (
            TrainingRecord(step=0, kind="critic", wasserstein=1.5, grad_penalty=0.2),
            TrainingRecord(step=0, kind="generator", adversarial=-1.0, l_var=0.1),
            TrainingRecord(step=1, kind="critic", wasserstein=0.5, grad_penalty=0.1),
        ):
            log.append(record)
        assert log.wasserstein_series() == [1.5, 0.5]
        assert log.grad_penalty_series() == [0.2, 0.1]
        assert len(log.generator_records()) == 1


class TestConfigModels:
    """Test cases for cohort and controller settings."""

    def test_default_cohort_is_ordered(self):
        """Test that the default drifts satisfy the energy ordering."""
        cfg = VirtualCohortConfig()
        assert cfg.drift(TaskPortion.P1) == (0.0, 0.0, 0.0)
        assert cfg.inflation_factor(TaskPortion.P2) == 1.0

    def test_reversed_drifts_rejected(self):
        """Test that a larger P2 drift violates the ordering."""
        with pytest.raises(ValidationError):
            VirtualCohortConfig(
                drifts={
                    TaskPortion.P2: (1.0, 1.0, 1.0),
                    TaskPortion.P3: (0.5, 0.5, 0.5),
                }
            )

    def test_reversed_drifts_allowed_without_ordering(self):
        """Test that the ordering check can be disabled."""
        cfg = VirtualCohortConfig(
            drifts={TaskPortion.P2: (1.0, 1.0, 1.0), TaskPortion.P3: (0.5, 0.5, 0.5)},
            enforce_ordering=False,
        )
        assert cfg.drift(TaskPortion.P2) == (1.0, 1.0, 1.0)

    def test_drift_length_checked(self):
        """Test that drifts need one value per feature."""
        with pytest.raises(ValidationError):
            VirtualCohortConfig(drifts={TaskPortion.P2: (1.0,)})

    def test_controller_band(self):
        """Test that the hysteresis band must leave a gap."""
        with pytest.raises(ValidationError):
            ControllerConfig(theta_low=1.0, theta_high=1.2, hysteresis=0.2)

    def test_comparison_report_rank_range(self):
        """Test that rank correlations outside [-1, 1] are rejected."""
        with pytest.raises(ValidationError):
            ComparisonReport(
                participants=["p01"],
                transitions=["P1->P2"],
                real={"P1->P2": [1.0]},
                synthetic={"P1->P2": [1.0]},
                rank_correlation={"P1->P2": 1.5},
            )
