"""Pydantic data models for the EEG SBP validator.

This module defines the domain types shared by the pipeline: feature schemas,
samples and datasets, normalization statistics, transport inputs and results,
network and training configuration, and the report records written by the
harness. All models validate their invariants on construction.
"""

import math
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # noqa: D101
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FloatArray = NDArray[np.float64]


class TaskPortion(StrEnum):
    """Ordinal task portion label; ``P1`` is the baseline."""

    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"

    @property
    def index(self) -> int:
        """Zero-based ordinal position."""
        return list(TaskPortion).index(self)


class SampleSpace(StrEnum):
    """Which units a sample's features are expressed in."""

    RAW = "raw"
    NORMALIZED = "normalized"


Transition = tuple[TaskPortion, TaskPortion]

DEFAULT_TRANSITIONS: list[Transition] = [
    (TaskPortion.P1, TaskPortion.P2),
    (TaskPortion.P1, TaskPortion.P3),
]


def transition_label(transition: Transition) -> str:
    """Render a transition as ``P1->P2``."""
    source, target = transition
    return f"{source.value}->{target.value}"


def parse_transition(text: str) -> Transition:
    """Parse ``P1:P2`` or ``P1->P2`` into a transition.

    Raises:
        ValueError: If the text is not two known portion labels
    """
    cleaned = text.strip().replace("->", ":")
    parts = [part.strip() for part in cleaned.split(":")]
    if len(parts) != 2:
        raise ValueError(f"Transition must look like 'P1:P2', got '{text}'")
    try:
        return TaskPortion(parts[0]), TaskPortion(parts[1])
    except ValueError as e:
        raise ValueError(f"Unknown portion in transition '{text}'") from e


def _as_float_matrix(value: Any, name: str) -> FloatArray:
    array = np.array(value, dtype=np.float64, copy=True)
    if array.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {array.shape}")
    array.setflags(write=False)
    return array


def _as_float_vector(value: Any, name: str) -> FloatArray:
    array = np.array(value, dtype=np.float64, copy=True)
    if array.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {array.shape}")
    array.setflags(write=False)
    return array


class FeatureSchema(BaseModel):
    """Ordered feature names of the multivariate feature space.

    Attributes:
        feature_names: Unique, non-empty feature identifiers in column order

    Example:
        >>> schema = FeatureSchema(feature_names=("theta", "alpha", "engagement"))
        >>> schema.dimension
        3
    """

    model_config = ConfigDict(frozen=True)

    feature_names: tuple[str, ...] = Field(
        ..., description="Ordered feature identifiers", min_length=1
    )

    @field_validator("feature_names")
    @classmethod
    def validate_feature_names(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        """Strip names and reject empty or duplicate identifiers.

        Args:
            v: Raw feature names

        Returns:
            The cleaned names

        Raises:
            ValueError: If a name is empty or repeated
        """
        cleaned = tuple(name.strip() for name in v)
        if any(not name for name in cleaned):
            raise ValueError("Feature names cannot be empty")
        if len(set(cleaned)) != len(cleaned):
            raise ValueError(f"Feature names must be unique: {list(cleaned)}")
        return cleaned

    @property
    def dimension(self) -> int:
        """Feature dimension d."""
        return len(self.feature_names)


class Sample(BaseModel):
    """A single feature vector tagged with participant and task portion.

    Attributes:
        participant_id: Opaque participant identifier
        task_portion: Task portion label
        features: Feature values in schema order
        space: Whether the values are raw or baseline-normalized
    """

    model_config = ConfigDict(frozen=True)

    participant_id: str = Field(..., description="Participant identifier", min_length=1)
    task_portion: TaskPortion = Field(..., description="Task portion label")
    features: tuple[float, ...] = Field(..., description="Feature values", min_length=1)
    space: SampleSpace = Field(default=SampleSpace.RAW, description="Feature units")

    @field_validator("features")
    @classmethod
    def validate_finite(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        """Reject NaN and infinite feature values."""
        if not all(math.isfinite(value) for value in v):
            raise ValueError("Feature values must be finite")
        return v


class Dataset(BaseModel):
    """Column-oriented collection of samples sharing one schema and space.

    Samples are stored as parallel participant/portion columns plus an
    ``n x d`` feature matrix; :attr:`samples` materializes :class:`Sample`
    objects on demand. The feature matrix is read-only.

    Attributes:
        feature_schema: Shared feature schema
        participant_ids: Participant identifier per row
        portions: Task portion per row
        features: ``n x d`` feature matrix
        space: Raw or normalized units for every row
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    feature_schema: FeatureSchema = Field(..., description="Feature schema")
    participant_ids: tuple[str, ...] = Field(..., description="Participant per row")
    portions: tuple[TaskPortion, ...] = Field(..., description="Task portion per row")
    features: np.ndarray = Field(..., description="Feature matrix (n x d)")
    space: SampleSpace = Field(default=SampleSpace.RAW, description="Feature units")

    @field_validator("features", mode="before")
    @classmethod
    def coerce_features(cls, v: Any) -> FloatArray:
        """Copy the feature matrix into a read-only float64 array."""
        return _as_float_matrix(v, "features")

    @model_validator(mode="after")
    def validate_columns(self) -> "Dataset":
        """Check that the columns agree in length, width and finiteness."""
        n_rows = self.features.shape[0]
        if len(self.participant_ids) != n_rows or len(self.portions) != n_rows:
            raise ValueError(
                "participant_ids, portions and features must have the same length"
            )
        if self.features.shape[1] != self.feature_schema.dimension:
            raise ValueError(
                f"Feature matrix has {self.features.shape[1]} columns, "
                f"schema has {self.feature_schema.dimension}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("Feature values must be finite")
        return self

    @classmethod
    def from_samples(
        cls,
        feature_schema: FeatureSchema,
        samples: list[Sample],
        space: SampleSpace = SampleSpace.RAW,
    ) -> "Dataset":
        """Build a dataset from individual samples.

        Raises:
            ValueError: If a sample's space or width does not match
        """
        for sample in samples:
            if sample.space != space:
                raise ValueError("All samples must share one space tag")
        features = np.array(
            [sample.features for sample in samples], dtype=np.float64
        ).reshape(len(samples), feature_schema.dimension)
        return cls(
            feature_schema=feature_schema,
            participant_ids=tuple(sample.participant_id for sample in samples),
            portions=tuple(sample.task_portion for sample in samples),
            features=features,
            space=space,
        )

    def __len__(self) -> int:
        """Number of samples."""
        return int(self.features.shape[0])

    @property
    def dimension(self) -> int:
        """Feature dimension d."""
        return self.feature_schema.dimension

    @property
    def samples(self) -> list[Sample]:
        """Materialize every row as a :class:`Sample`."""
        return [
            Sample(
                participant_id=pid,
                task_portion=portion,
                features=tuple(float(x) for x in row),
                space=self.space,
            )
            for pid, portion, row in zip(
                self.participant_ids, self.portions, self.features, strict=True
            )
        ]

    def participants(self) -> list[str]:
        """Participant identifiers in order of first appearance."""
        return list(dict.fromkeys(self.participant_ids))

    def portions_present(self) -> list[TaskPortion]:
        """Portion labels present, in ordinal order."""
        present = set(self.portions)
        return [portion for portion in TaskPortion if portion in present]

    def row_mask(
        self, participant: str | None = None, portion: TaskPortion | None = None
    ) -> NDArray[np.bool_]:
        """Boolean mask of rows matching the given tags (``None`` matches all)."""
        mask = np.ones(len(self), dtype=bool)
        if participant is not None:
            mask &= np.array([pid == participant for pid in self.participant_ids])
        if portion is not None:
            mask &= np.array([p == portion for p in self.portions])
        return mask


class FeatureStatistics(BaseModel):
    """Per-feature mean and population standard deviation."""

    model_config = ConfigDict(frozen=True)

    mean: tuple[float, ...] = Field(..., description="Per-feature mean")
    std: tuple[float, ...] = Field(..., description="Per-feature population std")
    count: int = Field(..., description="Number of samples summarized", ge=1)


class NormalizeConfig(BaseModel):
    """Settings for baseline-referenced normalization."""

    baseline_portion: TaskPortion = Field(
        default=TaskPortion.P1, description="Portion used as the baseline reference"
    )
    eps: float = Field(default=1e-6, description="Stability constant", gt=0.0)
    clip_lo: float = Field(default=-5.0, description="Lower clip bound")
    clip_hi: float = Field(default=5.0, description="Upper clip bound")

    @model_validator(mode="after")
    def validate_clip(self) -> "NormalizeConfig":
        """Require a non-empty clip interval."""
        if not self.clip_lo < self.clip_hi:
            raise ValueError("clip_lo must be smaller than clip_hi")
        return self

    @property
    def clip(self) -> "ClipRange":
        """The configured clip range."""
        return ClipRange(lo=self.clip_lo, hi=self.clip_hi)


class ClipRange(BaseModel):
    """Closed interval applied to normalized features."""

    model_config = ConfigDict(frozen=True)

    lo: float = Field(default=-5.0, description="Lower bound")
    hi: float = Field(default=5.0, description="Upper bound")

    @model_validator(mode="after")
    def validate_order(self) -> "ClipRange":
        """Require ``lo < hi``."""
        if not self.lo < self.hi:
            raise ValueError(
                f"Clip range must satisfy lo < hi, got [{self.lo}, {self.hi}]"
            )
        return self


class BaselineStats(BaseModel):
    """Per-participant baseline mean and standard deviation in raw units.

    Attributes:
        participant_id: Participant the statistics belong to
        mu: Per-feature baseline mean
        sigma: Per-feature baseline population std (non-negative)
        eps: Stability constant added to sigma
        baseline_portion: Portion the statistics were computed from
    """

    model_config = ConfigDict(frozen=True)

    participant_id: str = Field(..., description="Participant identifier", min_length=1)
    mu: tuple[float, ...] = Field(..., description="Baseline mean", min_length=1)
    sigma: tuple[float, ...] = Field(..., description="Baseline std", min_length=1)
    eps: float = Field(default=1e-6, description="Stability constant", gt=0.0)
    baseline_portion: TaskPortion = Field(default=TaskPortion.P1)

    @model_validator(mode="after")
    def validate_vectors(self) -> "BaselineStats":
        """Check equal lengths, finiteness and non-negative sigma."""
        if len(self.mu) != len(self.sigma):
            raise ValueError("mu and sigma must have the same length")
        if not all(math.isfinite(x) for x in self.mu + self.sigma):
            raise ValueError("Baseline statistics must be finite")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma entries must be non-negative")
        return self

    @property
    def mu_array(self) -> FloatArray:
        """Mean as a float array."""
        return np.asarray(self.mu, dtype=np.float64)

    @property
    def scale_array(self) -> FloatArray:
        """``sigma + eps`` as a float array."""
        return np.asarray(self.sigma, dtype=np.float64) + self.eps


class EmpiricalDistribution(BaseModel):
    """Weighted point cloud in feature space.

    Attributes:
        points: ``n x d`` support points
        weights: Length-n probability vector
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray = Field(..., description="Support points (n x d)")
    weights: np.ndarray = Field(..., description="Simplex weights (n,)")

    @field_validator("points", mode="before")
    @classmethod
    def coerce_points(cls, v: Any) -> FloatArray:
        """Copy the support into a read-only float64 matrix."""
        return _as_float_matrix(v, "points")

    @field_validator("weights", mode="before")
    @classmethod
    def coerce_weights(cls, v: Any) -> FloatArray:
        """Copy the weights into a read-only float64 vector."""
        return _as_float_vector(v, "weights")

    @model_validator(mode="after")
    def validate_simplex(self) -> "EmpiricalDistribution":
        """Check support size, finiteness and the simplex constraint."""
        n_points = self.points.shape[0]
        if n_points < 1:
            raise ValueError("An empirical distribution needs at least one point")
        if self.weights.shape[0] != n_points:
            raise ValueError("weights must have one entry per point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("Support points must be finite")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")
        return self

    @classmethod
    def uniform(cls, points: Any) -> "EmpiricalDistribution":
        """Uniform weights ``1/n`` over the given points."""
        matrix = np.asarray(points, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        n_points = matrix.shape[0]
        return cls(points=matrix, weights=np.full(n_points, 1.0 / max(n_points, 1)))

    @property
    def dimension(self) -> int:
        """Feature dimension d."""
        return int(self.points.shape[1])

    @property
    def size(self) -> int:
        """Number of support points."""
        return int(self.points.shape[0])

    def pruned(self) -> "EmpiricalDistribution":
        """Drop zero-weight points."""
        keep = self.weights > 0
        if bool(np.all(keep)):
            return self
        weights = self.weights[keep]
        return EmpiricalDistribution(
            points=self.points[keep], weights=weights / weights.sum()
        )


class SBPConfig(BaseModel):
    """Entropic transport solver settings.

    When ``epsilon`` is unset the regularization is chosen per problem as
    ``epsilon_scale * median(C)``.

    Attributes:
        epsilon: Fixed entropic regularization (squared feature units)
        epsilon_scale: Multiple of the median cost used when epsilon is unset
        max_iterations: Iteration cap over all scaling stages
        tolerance: L1 marginal violation that counts as converged
        epsilon_scaling_steps: Warm-start stages, epsilon halved each stage
        max_relaxation: Upper bound of the adaptive over-relaxation factor;
            1 gives plain Sinkhorn
        strict: Raise instead of warning when a solve does not converge
    """

    epsilon: float | None = Field(default=None, description="Regularization", gt=0.0)
    epsilon_scale: float = Field(
        default=0.05, description="Fraction of median cost used as epsilon", gt=0.0
    )
    max_iterations: int = Field(default=10000, description="Iteration cap", ge=1)
    tolerance: float = Field(default=1e-8, description="L1 marginal tolerance", gt=0.0)
    epsilon_scaling_steps: int = Field(default=4, description="Scaling stages", ge=1)
    max_relaxation: float = Field(
        default=1.95, description="Over-relaxation bound", ge=1.0, lt=2.0
    )
    strict: bool = Field(default=False, description="Fail on non-convergence")


class TransportPlan(BaseModel):
    """Entropic coupling together with its target marginals."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coupling: np.ndarray = Field(..., description="Coupling matrix (n x m)")
    source_marginal: np.ndarray = Field(..., description="Row marginal a")
    target_marginal: np.ndarray = Field(..., description="Column marginal b")

    @field_validator("coupling", mode="before")
    @classmethod
    def coerce_coupling(cls, v: Any) -> FloatArray:
        """Copy the coupling into a read-only float64 matrix."""
        return _as_float_matrix(v, "coupling")

    @field_validator("source_marginal", "target_marginal", mode="before")
    @classmethod
    def coerce_marginal(cls, v: Any) -> FloatArray:
        """Copy a marginal into a read-only float64 vector."""
        return _as_float_vector(v, "marginal")

    @model_validator(mode="after")
    def validate_shape(self) -> "TransportPlan":
        """Check shapes and non-negativity."""
        n_rows, n_cols = self.coupling.shape
        if self.source_marginal.shape != (n_rows,):
            raise ValueError("source_marginal does not match coupling rows")
        if self.target_marginal.shape != (n_cols,):
            raise ValueError("target_marginal does not match coupling columns")
        if np.any(self.coupling < 0):
            raise ValueError("coupling entries must be non-negative")
        return self

    def marginal_error(self) -> float:
        """Larger of the L1 row and column marginal violations."""
        rows = self.coupling.sum(axis=1) - self.source_marginal
        cols = self.coupling.sum(axis=0) - self.target_marginal
        row_error = float(np.abs(rows).sum())
        col_error = float(np.abs(cols).sum())
        return max(row_error, col_error)


class SBPResult(BaseModel):
    """Transport energy of one solve plus convergence diagnostics."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    energy: float = Field(..., description="Transport term <plan, C>", ge=0.0)
    plan: TransportPlan = Field(..., description="Entropic coupling")
    iterations_used: int = Field(..., description="Sinkhorn iterations", ge=0)
    converged: bool = Field(..., description="Marginal tolerance reached")
    marginal_error: float = Field(..., description="L1 marginal violation", ge=0.0)
    epsilon: float = Field(..., description="Final regularization", gt=0.0)
    source_potential: np.ndarray = Field(..., description="Dual potential f")
    target_potential: np.ndarray = Field(..., description="Dual potential g")

    def diagnostics(self) -> dict[str, Any]:
        """JSON-ready diagnostics record."""
        return {
            "epsilon": self.epsilon,
            "iterations": self.iterations_used,
            "marginal_error": self.marginal_error,
            "converged": self.converged,
            "energy": self.energy,
        }


class Activation(StrEnum):
    """Activation kinds supported by the MLP stack."""

    LEAKY_RELU = "leaky_relu"
    SMOOTH_TANH = "smooth_tanh"
    IDENTITY = "identity"


class DenseLayerSpec(BaseModel):
    """One fully connected layer followed by an activation."""

    model_config = ConfigDict(frozen=True)

    width: int = Field(..., description="Output width", ge=1)
    activation: Activation = Field(default=Activation.IDENTITY)
    slope: float = Field(default=0.2, description="Leaky-rectifier slope", ge=0.0)


class MlpSpec(BaseModel):
    """Fully connected network layout with optional residual blocks.

    A residual block ``(start, stop)`` covers layers ``start..stop-1``; its
    output is the block input plus the output of those layers, so the block's
    input and output widths must agree.

    Attributes:
        input_width: Width of the network input
        layers: Dense layers in order
        residual_blocks: Non-overlapping half-open layer ranges
    """

    model_config = ConfigDict(frozen=True)

    input_width: int = Field(..., description="Input width", ge=1)
    layers: tuple[DenseLayerSpec, ...] = Field(..., min_length=1)
    residual_blocks: tuple[tuple[int, int], ...] = Field(default=())

    @model_validator(mode="after")
    def validate_blocks(self) -> "MlpSpec":
        """Check block ranges and width compatibility."""
        previous_stop = 0
        for start, stop in self.residual_blocks:
            if not 0 <= start < stop <= len(self.layers):
                raise ValueError(f"Residual block ({start}, {stop}) out of range")
            if start < previous_stop:
                raise ValueError("Residual blocks must be ordered and disjoint")
            width_in = self.input_width if start == 0 else self.layers[start - 1].width
            if width_in != self.layers[stop - 1].width:
                raise ValueError(
                    f"Residual block ({start}, {stop}) maps width {width_in} "
                    f"to {self.layers[stop - 1].width}"
                )
            previous_stop = stop
        return self

    @property
    def output_width(self) -> int:
        """Width of the final layer."""
        return self.layers[-1].width


class GeneratorConfig(BaseModel):
    """Conditional generator architecture."""

    latent_dim: int = Field(default=64, description="Latent noise width", ge=1)
    participant_embedding_dim: int = Field(default=8, ge=0)
    portion_embedding_dim: int = Field(default=8, ge=0)
    hidden_width: int = Field(default=128, description="Trunk width", ge=1)
    residual_blocks: int = Field(default=3, description="Residual blocks", ge=0)
    layers_per_block: int = Field(default=2, ge=1)
    activation: Activation = Field(default=Activation.LEAKY_RELU)
    slope: float = Field(default=0.2, ge=0.0)


class CriticConfig(BaseModel):
    """Packed Wasserstein critic architecture."""

    pack_size: int = Field(default=4, description="Samples per pack", ge=1)
    hidden_widths: tuple[int, ...] = Field(default=(256, 256, 128), min_length=1)
    activation: Activation = Field(default=Activation.LEAKY_RELU)
    slope: float = Field(default=0.2, ge=0.0)


class TrainConfig(BaseModel):
    """WGAN-GP training hyperparameters.

    Attributes:
        lambda_gp: Gradient-penalty weight
        lambda_var: Variance-matching weight
        critic_steps: Critic updates per generator update
        batch_size: Packs per update
        generator_steps: Total generator updates
        checkpoint_every: Write a checkpoint every K generator steps (0 = end only)
        seed: Seed of the training RNG stream
    """

    lambda_gp: float = Field(default=10.0, ge=0.0)
    lambda_var: float = Field(default=1.0, ge=0.0)
    critic_steps: int = Field(default=5, ge=1)
    batch_size: int = Field(default=32, description="Packs per batch", ge=1)
    generator_lr: float = Field(default=1e-4, gt=0.0)
    critic_lr: float = Field(default=1e-4, gt=0.0)
    beta1: float = Field(default=0.5, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    generator_steps: int = Field(default=1500, ge=0)
    checkpoint_every: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)


class TrainingRecord(BaseModel):
    """One update of the training loop."""

    model_config = ConfigDict(frozen=True)

    step: int = Field(..., description="Update index within its kind", ge=0)
    kind: Literal["critic", "generator"]
    wasserstein: float | None = None
    grad_penalty: float | None = None
    l_var: float | None = None
    adversarial: float | None = None


class TrainingLog(BaseModel):
    """Append-only sequence of training records."""

    records: list[TrainingRecord] = Field(default_factory=list)

    def append(self, record: TrainingRecord) -> None:
        """Append one record."""
        self.records.append(record)

    def critic_records(self) -> list[TrainingRecord]:
        """Records of critic updates in order."""
        return [r for r in self.records if r.kind == "critic"]

    def generator_records(self) -> list[TrainingRecord]:
        """Records of generator updates in order."""
        return [r for r in self.records if r.kind == "generator"]

    def wasserstein_series(self) -> list[float]:
        """Wasserstein estimates of the critic updates."""
        records = self.critic_records()
        return [r.wasserstein for r in records if r.wasserstein is not None]

    def grad_penalty_series(self) -> list[float]:
        """Gradient-penalty values of the critic updates."""
        return [
            r.grad_penalty for r in self.critic_records() if r.grad_penalty is not None
        ]


class VirtualCohortConfig(BaseModel):
    """Gaussian stand-in cohort with known transport ground truth.

    Each participant draws a baseline mean uniformly from ``mean_range`` and a
    baseline std uniformly from ``std_range`` per feature. Portion ``k`` is
    Gaussian with mean ``mu + drifts[k]`` and std ``sigma * inflation[k]``.
    """

    num_participants: int = Field(default=10, ge=1)
    samples_per_group: int = Field(default=200, ge=1)
    feature_names: tuple[str, ...] = Field(default=("theta", "alpha", "engagement"))
    mean_range: tuple[float, float] = Field(default=(-5.0, 5.0))
    std_range: tuple[float, float] = Field(default=(0.8, 1.25))
    drifts: dict[TaskPortion, tuple[float, ...]] = Field(
        default_factory=lambda: {
            TaskPortion.P2: (0.4, 0.4, 0.4),
            TaskPortion.P3: (0.8, 0.8, 0.8),
            TaskPortion.P4: (1.0, 1.0, 1.0),
        }
    )
    inflation: dict[TaskPortion, float] = Field(default_factory=dict)
    portions: tuple[TaskPortion, ...] = Field(default=tuple(TaskPortion))
    enforce_ordering: bool = Field(
        default=True, description="Require energy(P1->P2) < energy(P1->P3)"
    )
    seed: int = Field(default=7, ge=0)

    @model_validator(mode="after")
    def validate_cohort(self) -> "VirtualCohortConfig":
        """Check dimensions, positive stds and the drift ordering."""
        d = len(self.feature_names)
        if d < 1:
            raise ValueError("At least one feature is required")
        if not 0 < self.std_range[0] <= self.std_range[1]:
            raise ValueError("std_range must be positive and ordered")
        if self.mean_range[0] > self.mean_range[1]:
            raise ValueError("mean_range must be ordered")
        for portion, drift in self.drifts.items():
            if len(drift) != d:
                raise ValueError(
                    f"Drift for {portion} has length {len(drift)}, need {d}"
                )
        if any(factor <= 0 for factor in self.inflation.values()):
            raise ValueError("Inflation factors must be positive")
        if self.enforce_ordering and {TaskPortion.P2, TaskPortion.P3} <= set(
            self.portions
        ):
            shift_2 = sum(x * x for x in self.drift(TaskPortion.P2))
            shift_3 = sum(x * x for x in self.drift(TaskPortion.P3))
            spread_2 = abs(self.inflation_factor(TaskPortion.P2) - 1.0)
            spread_3 = abs(self.inflation_factor(TaskPortion.P3) - 1.0)
            if not (shift_2 < shift_3 and spread_2 <= spread_3):
                raise ValueError(
                    "Drifts do not give energy(P1->P2) < energy(P1->P3); "
                    "set enforce_ordering=false to allow this"
                )
        return self

    def drift(self, portion: TaskPortion) -> tuple[float, ...]:
        """Drift of a portion (zero for the baseline or when unset)."""
        return self.drifts.get(portion, (0.0,) * len(self.feature_names))

    def inflation_factor(self, portion: TaskPortion) -> float:
        """Std inflation of a portion (1 when unset)."""
        return self.inflation.get(portion, 1.0)


class WindowConfig(BaseModel):
    """Sliding window used by the closed-loop controller."""

    capacity: int = Field(default=200, description="Window size W", ge=1)
    stride: int = Field(default=50, description="Recompute every s samples", ge=1)


class ControllerConfig(BaseModel):
    """Energy thresholds with hysteresis and reversal cooldown."""

    theta_low: float = Field(default=0.25, description="Low-energy threshold")
    theta_high: float = Field(default=1.5, description="High-energy threshold")
    hysteresis: float = Field(default=0.1, description="Band half-width h", ge=0.0)
    cooldown: int = Field(default=2, description="Reversal cooldown (decisions)", ge=0)

    @model_validator(mode="after")
    def validate_band(self) -> "ControllerConfig":
        """Require ``theta_low + h < theta_high - h``."""
        if not self.theta_low + self.hysteresis < self.theta_high - self.hysteresis:
            raise ValueError("Need theta_low + hysteresis < theta_high - hysteresis")
        return self


class GroupSummary(BaseModel):
    """Population mean and std of one energy column."""

    model_config = ConfigDict(frozen=True)

    mean: float
    std: float = Field(..., ge=0.0)
    count: int = Field(..., ge=1)


class ComparisonReport(BaseModel):
    """Real-versus-synthetic agreement of per-participant transport energies.

    Attributes:
        participants: Participant order of the energy lists
        transitions: Transition labels, e.g. ``P1->P2``
        real: Real-data energies per transition label
        synthetic: Synthetic-data energies per transition label
        direction_pair: The two transitions compared for direction agreement
        direction_agreement: Fraction of participants with matching change sign
        rank_correlation: Spearman correlation per transition label
        summaries: Group mean/std per source (``real``/``synthetic``) and label
    """

    participants: list[str]
    transitions: list[str]
    real: dict[str, list[float]]
    synthetic: dict[str, list[float]]
    direction_pair: tuple[str, str] | None = None
    direction_agreement: float | None = Field(default=None, ge=0.0, le=1.0)
    rank_correlation: dict[str, float | None] = Field(default_factory=dict)
    summaries: dict[str, dict[str, GroupSummary]] = Field(default_factory=dict)

    @field_validator("rank_correlation")
    @classmethod
    def validate_rank_range(cls, v: dict[str, float | None]) -> dict[str, float | None]:
        """Keep correlations inside [-1, 1]."""
        for label, value in v.items():
            if value is not None and not -1.0 - 1e-12 <= value <= 1.0 + 1e-12:
                raise ValueError(f"Rank correlation for {label} out of range: {value}")
        return v


# Export all models
__all__ = [
    "TaskPortion",
    "SampleSpace",
    "Transition",
    "DEFAULT_TRANSITIONS",
    "transition_label",
    "parse_transition",
    "FeatureSchema",
    "Sample",
    "Dataset",
    "FeatureStatistics",
    "NormalizeConfig",
    "ClipRange",
    "BaselineStats",
    "EmpiricalDistribution",
    "SBPConfig",
    "TransportPlan",
    "SBPResult",
    "Activation",
    "DenseLayerSpec",
    "MlpSpec",
    "GeneratorConfig",
    "CriticConfig",
    "TrainConfig",
    "TrainingRecord",
    "TrainingLog",
    "VirtualCohortConfig",
    "WindowConfig",
    "ControllerConfig",
    "GroupSummary",
    "ComparisonReport",
]
