"""Experiment driver and real-versus-synthetic comparison metrics.

The harness builds Gaussian stand-in cohorts with closed-form transport ground
truth, runs the normalize -> train -> generate -> energy -> compare pipeline,
and reports how well synthetic data preserves the direction and ranking of
per-participant transport energies.
"""

import importlib.metadata
import traceback
from collections.abc import Callable, Sequence
from datetime import datetime

try:
    from datetime import UTC
except ImportError:  # Python < 3.11
    from datetime import timezone

    UTC = timezone.utc
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, ValidationError
from scipy.stats import spearmanr

from .config import ExperimentSettings
from .dataset import SchemaMismatchError, summarize, write_dataset
from .exceptions import InvalidConfigError, ValidationFailure
from .gan import Trainer, synthesize_dataset, write_training_log
from .models import (
    ComparisonReport,
    Dataset,
    FeatureSchema,
    FeatureStatistics,
    GroupSummary,
    SampleSpace,
    TaskPortion,
    TrainingLog,
    Transition,
    VirtualCohortConfig,
    transition_label,
)
from .normalize import normalize_dataset, save_baseline_stats
from .transport import energy_table, gaussian_transport_oracle, write_energy_table
from .utils import derive_seed, write_json, write_jsonl

T = TypeVar("T")

TIE_TOLERANCE = 1e-9
HISTOGRAM_BINS = 50
PACKAGES = ("eeg-sbp-validator", "numpy", "scipy", "pandas", "pydantic", "matplotlib")


class ParticipantMismatchError(ValidationFailure):
    """Two energy tables do not cover the same participants."""


class TooFewParticipantsError(ValidationFailure):
    """A rank statistic needs at least three participants."""


class EmptyColumnError(ValidationFailure):
    """An energy column is missing or empty."""


class CohortParameters(BaseModel):
    """Per-participant baseline mean and std drawn for a virtual cohort."""

    participant_id: str
    mean: tuple[float, ...]
    std: tuple[float, ...]


def build_cohort_config(values: dict[str, Any]) -> VirtualCohortConfig:
    """Validate cohort settings.

    Raises:
        InvalidConfigError: If the settings are invalid
    """
    try:
        return VirtualCohortConfig.model_validate(values)
    except ValidationError as e:
        raise InvalidConfigError(f"Invalid cohort configuration: {e}") from e


def cohort_parameters(cfg: VirtualCohortConfig) -> list[CohortParameters]:
    """Baseline parameters of every participant, in participant order."""
    rng = np.random.default_rng(derive_seed(cfg.seed, "cohort_params"))
    d = len(cfg.feature_names)
    parameters: list[CohortParameters] = []
    for k in range(cfg.num_participants):
        mean = rng.uniform(cfg.mean_range[0], cfg.mean_range[1], size=d)
        std = rng.uniform(cfg.std_range[0], cfg.std_range[1], size=d)
        parameters.append(
            CohortParameters(
                participant_id=f"p{k + 1:02d}",
                mean=tuple(float(x) for x in mean),
                std=tuple(float(x) for x in std),
            )
        )
    return parameters


def generate_virtual_cohort(cfg: VirtualCohortConfig | None = None) -> Dataset:
    """Raw-space Gaussian cohort.

    Participant ``p`` in portion ``k`` is ``N(mean_p + drift_k,
    diag(std_p * inflation_k)^2)``. Rows are ordered by participant, then
    portion.
    """
    cfg = cfg or VirtualCohortConfig()
    rng = np.random.default_rng(derive_seed(cfg.seed, "cohort_samples"))
    n = cfg.samples_per_group
    participant_ids: list[str] = []
    portions: list[TaskPortion] = []
    blocks: list[np.ndarray] = []
    for params in cohort_parameters(cfg):
        for portion in cfg.portions:
            loc = np.asarray(params.mean) + np.asarray(cfg.drift(portion))
            spread = np.asarray(params.std) * cfg.inflation_factor(portion)
            blocks.append(rng.normal(loc, spread, size=(n, len(cfg.feature_names))))
            participant_ids.extend([params.participant_id] * n)
            portions.extend([portion] * n)

    dataset = Dataset(
        feature_schema=FeatureSchema(feature_names=cfg.feature_names),
        participant_ids=tuple(participant_ids),
        portions=tuple(portions),
        features=np.vstack(blocks),
        space=SampleSpace.RAW,
    )
    logger.info(
        f"Generated virtual cohort: {cfg.num_participants} participants x "
        f"{len(cfg.portions)} portions x {n} samples (seed={cfg.seed})"
    )
    return dataset


def cohort_oracle_energies(
    cfg: VirtualCohortConfig,
    transitions: Sequence[Transition],
    normalized: bool = False,
) -> pd.DataFrame:
    """Closed-form transport cost of every participant and transition.

    With ``normalized=True`` the Gaussians are expressed in units of the
    participant's true baseline std, which is what normalization converges to
    as the sample size grows.
    """
    rows: list[list[float]] = []
    ids: list[str] = []
    for params in cohort_parameters(cfg):
        std = np.asarray(params.std)
        unit = std if normalized else np.ones_like(std)
        energies: list[float] = []
        for source, target in transitions:
            means = [np.asarray(cfg.drift(p)) / unit for p in (source, target)]
            covs = [
                np.diag((std * cfg.inflation_factor(p) / unit) ** 2)
                for p in (source, target)
            ]
            energies.append(
                gaussian_transport_oracle(means[0], covs[0], means[1], covs[1])
            )
        rows.append(energies)
        ids.append(params.participant_id)
    frame = pd.DataFrame(rows, index=pd.Index(ids, name="participant_id"))
    frame.columns = [transition_label(t) for t in transitions]
    return frame


def _aligned(real: pd.DataFrame, synthetic: pd.DataFrame) -> pd.DataFrame:
    same_size = len(real.index) == len(synthetic.index)
    if set(real.index) != set(synthetic.index) or not same_size:
        raise ParticipantMismatchError(
            f"Participants differ: {sorted(set(real.index) ^ set(synthetic.index))}"
        )
    return synthetic.loc[real.index]


def _column(table: pd.DataFrame, label: str) -> np.ndarray:
    if label not in table.columns:
        raise EmptyColumnError(f"Energy table has no column '{label}'")
    values = table[label].to_numpy(dtype=np.float64)
    if values.size == 0:
        raise EmptyColumnError(f"Column '{label}' is empty")
    return values


def _direction(
    before: np.ndarray, after: np.ndarray, tie_tolerance: float
) -> np.ndarray:
    diff = after - before
    scale = np.maximum(np.abs(before), np.abs(after))
    return np.where(np.abs(diff) <= tie_tolerance * scale, 0, np.sign(diff)).astype(
        int
    )


def direction_agreement(
    real: pd.DataFrame,
    synthetic: pd.DataFrame,
    pair: tuple[str, str] = ("P1->P2", "P1->P3"),
    tie_tolerance: float = TIE_TOLERANCE,
) -> float:
    """Fraction of participants whose energy change has the same sign.

    The change is ``E(pair[1]) - E(pair[0])``. A change within
    ``tie_tolerance`` times the larger of the two energies is a tie, and ties
    match only ties. The tolerance absorbs solver rounding, not sampling
    noise: two sampled portions drawn from one distribution still differ by
    their Monte-Carlo error, so a zero-drift sampled cohort scores near
    chance, while its closed-form oracle table is all ties.

    Raises:
        ParticipantMismatchError: If the tables cover different participants
        EmptyColumnError: If a column of the pair is missing
    """
    synthetic = _aligned(real, synthetic)
    real_sign = _direction(
        _column(real, pair[0]), _column(real, pair[1]), tie_tolerance
    )
    synth_sign = _direction(
        _column(synthetic, pair[0]), _column(synthetic, pair[1]), tie_tolerance
    )
    return float(np.mean(real_sign == synth_sign))


def rank_correlation(real: Sequence[float], synthetic: Sequence[float]) -> float | None:
    """Spearman correlation with average ranks for ties.

    Returns:
        The correlation, or ``None`` when a column is constant

    Raises:
        ParticipantMismatchError: If the columns differ in length
        TooFewParticipantsError: If fewer than three participants are given
    """
    x = np.asarray(real, dtype=np.float64)
    y = np.asarray(synthetic, dtype=np.float64)
    if x.shape != y.shape:
        raise ParticipantMismatchError("Columns have different lengths")
    if x.size < 3:
        raise TooFewParticipantsError(
            f"Rank correlation needs >= 3 participants, got {x.size}"
        )
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    value = float(spearmanr(x, y).statistic)
    return float(np.clip(value, -1.0, 1.0))


def group_summary(table: pd.DataFrame, transition: str) -> GroupSummary:
    """Population mean and std of one transition column.

    Raises:
        EmptyColumnError: If the column is missing or empty
    """
    values = _column(table, transition)
    return GroupSummary(
        mean=float(np.mean(values)),
        std=float(np.std(values, ddof=0)),
        count=int(values.size),
    )


def compare_tables(
    real: pd.DataFrame,
    synthetic: pd.DataFrame,
    direction_pair: tuple[str, str] | None = None,
) -> ComparisonReport:
    """Agreement of a synthetic energy table with a real one.

    The direction pair defaults to the first two columns when at least two
    transitions are present.

    Raises:
        ParticipantMismatchError: If the tables cover different participants
    """
    synthetic = _aligned(real, synthetic)
    labels = [str(c) for c in real.columns]
    missing = [label for label in labels if label not in synthetic.columns]
    if missing:
        raise EmptyColumnError(f"Synthetic table lacks columns {missing}")
    if direction_pair is None and len(labels) >= 2:
        direction_pair = (labels[0], labels[1])

    ranks: dict[str, float | None] = {}
    for label in labels:
        try:
            ranks[label] = rank_correlation(
                _column(real, label), _column(synthetic, label)
            )
        except TooFewParticipantsError:
            logger.warning(f"Too few participants for a rank correlation on {label}")
            ranks[label] = None

    return ComparisonReport(
        participants=[str(p) for p in real.index],
        transitions=labels,
        real={label: [float(v) for v in _column(real, label)] for label in labels},
        synthetic={
            label: [float(v) for v in _column(synthetic, label)] for label in labels
        },
        direction_pair=direction_pair,
        direction_agreement=(
            direction_agreement(real, synthetic, direction_pair)
            if direction_pair
            else None
        ),
        rank_correlation=ranks,
        summaries={
            "real": {label: group_summary(real, label) for label in labels},
            "synthetic": {label: group_summary(synthetic, label) for label in labels},
        },
    )


class FeatureReport(BaseModel):
    """Per-feature statistics and fixed-bin histograms per feature.

    Attributes:
        features: Feature names in schema order
        real: Real-data statistics
        synthetic: Synthetic-data statistics
        bin_edges: ``bins + 1`` edges spanning the clip range
        histograms: Counts per source (``real``/``synthetic``) and feature
    """

    features: list[str]
    real: FeatureStatistics
    synthetic: FeatureStatistics
    bin_edges: list[float]
    histograms: dict[str, dict[str, list[int]]] = Field(default_factory=dict)

    def table(self) -> pd.DataFrame:
        """One row per feature: real and synthetic mean and std."""
        return feature_table(self.features, self.real, self.synthetic)


def feature_table(
    features: Sequence[str], real: FeatureStatistics, synthetic: FeatureStatistics
) -> pd.DataFrame:
    """Render statistics as one row per feature.

    Columns are ``feature,real_mean,real_std,synthetic_mean,synthetic_std``.
    """
    return pd.DataFrame(
        {
            "feature": list(features),
            "real_mean": list(real.mean),
            "real_std": list(real.std),
            "synthetic_mean": list(synthetic.mean),
            "synthetic_std": list(synthetic.std),
        }
    )


def feature_report(
    real: Dataset,
    synthetic: Dataset,
    clip: tuple[float, float] = (-5.0, 5.0),
    bins: int = HISTOGRAM_BINS,
) -> FeatureReport:
    """Compare per-feature statistics and histograms of two datasets.

    Raises:
        SchemaMismatchError: If the schemas or spaces differ
    """
    same_space = real.space == synthetic.space
    if real.feature_schema != synthetic.feature_schema or not same_space:
        raise SchemaMismatchError(
            "Real and synthetic datasets must share schema and space"
        )
    edges = np.linspace(clip[0], clip[1], bins + 1)
    histograms: dict[str, dict[str, list[int]]] = {}
    for source, data in (("real", real), ("synthetic", synthetic)):
        histograms[source] = {
            name: [int(c) for c in np.histogram(data.features[:, j], bins=edges)[0]]
            for j, name in enumerate(real.feature_schema.feature_names)
        }
    return FeatureReport(
        features=list(real.feature_schema.feature_names),
        real=summarize(real.features),
        synthetic=summarize(synthetic.features),
        bin_edges=[float(e) for e in edges],
        histograms=histograms,
    )


def write_feature_report(report: FeatureReport, output_dir: Path) -> tuple[Path, Path]:
    """Write ``feature_report.csv`` and ``feature_histograms.csv``."""
    output_dir.mkdir(parents=True, exist_ok=True)
    table_path = output_dir / "feature_report.csv"
    report.table().to_csv(table_path, index=False)

    records = [
        {
            "source": source,
            "feature": feature,
            "bin_left": report.bin_edges[k],
            "bin_right": report.bin_edges[k + 1],
            "count": count,
        }
        for source, per_feature in report.histograms.items()
        for feature, counts in per_feature.items()
        for k, count in enumerate(counts)
    ]
    histogram_path = output_dir / "feature_histograms.csv"
    pd.DataFrame(records).to_csv(histogram_path, index=False)
    return table_path, histogram_path


class TrainingStability(BaseModel):
    """Summary of the Wasserstein and gradient-penalty curves.

    Attributes:
        leading_mean_abs: Mean |Wasserstein estimate| over the leading window
        trailing_mean_abs: Mean |Wasserstein estimate| over the trailing window
        stabilized: Trailing mean below half the leading mean
        penalty_reference: Gradient penalty at the reference critic step
        penalty_max_after: Largest penalty after the reference step
        penalty_bounded: Every later penalty finite and within 10x the reference
    """

    critic_updates: int
    leading_mean_abs: float
    trailing_mean_abs: float
    stabilized: bool
    penalty_reference: float | None
    penalty_max_after: float | None
    penalty_bounded: bool


def moving_average(values: Sequence[float], window: int) -> list[float]:
    """Trailing moving average; the first entries average what is available."""
    series = pd.Series(list(values), dtype=np.float64)
    return [float(v) for v in series.rolling(window, min_periods=1).mean()]


def training_stability(
    log: TrainingLog, window_fraction: float = 0.2, reference_step: int = 100
) -> TrainingStability:
    """Compare the leading and trailing windows of a training log.

    Raises:
        EmptyColumnError: If the log has no critic updates
    """
    wasserstein = np.abs(np.asarray(log.wasserstein_series(), dtype=np.float64))
    penalties = np.asarray(log.grad_penalty_series(), dtype=np.float64)
    if wasserstein.size == 0:
        raise EmptyColumnError("Training log has no critic updates")
    window = max(1, int(round(window_fraction * wasserstein.size)))
    leading = float(wasserstein[:window].mean())
    trailing = float(wasserstein[-window:].mean())

    reference: float | None = None
    max_after: float | None = None
    bounded = bool(np.all(np.isfinite(penalties)))
    if penalties.size > reference_step:
        reference = float(penalties[reference_step])
        later = penalties[reference_step + 1 :]
        max_after = float(later.max()) if later.size else reference
        bounded = bounded and (max_after <= 10.0 * reference if reference > 0 else True)

    return TrainingStability(
        critic_updates=int(wasserstein.size),
        leading_mean_abs=leading,
        trailing_mean_abs=trailing,
        stabilized=trailing < 0.5 * leading,
        penalty_reference=reference,
        penalty_max_after=max_after,
        penalty_bounded=bounded,
    )


STAGES = ("data", "normalize", "train", "generate", "energy", "compare", "report")


def package_versions() -> dict[str, str]:
    """Installed versions of this package and its numeric stack."""
    versions: dict[str, str] = {}
    for name in PACKAGES:
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class Manifest:
    """Stage-by-stage record of a run, rewritten after every change."""

    def __init__(self, path: Path, command: str, config: dict[str, Any]):
        """Start a manifest with every stage pending."""
        self.path = path
        self.data: dict[str, Any] = {
            "command": command,
            "created": datetime.now(UTC).isoformat(timespec="seconds"),
            "config": config,
            "versions": package_versions(),
            "inputs": {},
            "outputs": [],
            "seeds": {},
            "stages": {},
            "failed_stage": None,
            "error": None,
        }

    def add_input(self, name: str, value: str) -> None:
        """Record an input file or source."""
        self.data["inputs"][name] = value
        self.write()

    def add_output(self, path: Path) -> None:
        """Record an output path relative to the manifest."""
        root = self.path.parent
        self.data["outputs"].append(
            str(path.relative_to(root)) if path.is_relative_to(root) else str(path)
        )
        self.write()

    def stage(self, name: str, action: Callable[[], T]) -> T:
        """Run one stage and record its status.

        Raises:
            EEGSBPError: Re-raised after the failure is recorded
        """
        self.data["stages"][name] = "running"
        self.write()
        logger.info(f"Stage '{name}' started")
        try:
            result = action()
        except Exception as e:
            self.data["stages"][name] = "failed"
            self.data["failed_stage"] = name
            self.data["error"] = "".join(traceback.format_exception_only(e)).strip()
            self.write()
            logger.error(f"Stage '{name}' failed: {e}")
            raise
        self.data["stages"][name] = "ok"
        self.write()
        return result

    def write(self) -> None:
        """Write ``manifest.json``."""
        write_json(self.path, self.data)


def run_experiment(
    settings: ExperimentSettings | None = None,
    output_dir: Path | str = Path("experiment"),
    dataset: Dataset | None = None,
    plots: bool = True,
) -> ComparisonReport:
    """Normalize, train, generate, compute energies and compare.

    When ``dataset`` is omitted, a virtual cohort is generated from
    ``settings.cohort`` with a seed derived from the global seed. Artifacts
    are written to ``output_dir`` as each stage completes; on failure the
    manifest names the failed stage and earlier artifacts are kept.

    Raises:
        EEGSBPError: Propagated from the failing stage
    """
    settings = settings or ExperimentSettings()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", "run_experiment", settings.flatten())
    seeds = {
        stage: settings.stage_seed(stage) for stage in ("cohort", "train", "generate")
    }
    manifest.data["seeds"] = {"global": settings.run.seed, **seeds}
    for stage in STAGES:
        manifest.data["stages"][stage] = "pending"
    manifest.write()
    transitions = settings.run.parsed_transitions()

    def load_data() -> Dataset:
        if dataset is not None:
            manifest.add_input("dataset", "in-memory")
            return dataset
        cohort = settings.cohort.model_copy(update={"seed": seeds["cohort"]})
        manifest.add_input("dataset", f"virtual cohort (seed={cohort.seed})")
        data = generate_virtual_cohort(cohort)
        write_dataset(data, out / "dataset_raw.csv")
        manifest.add_output(out / "dataset_raw.csv")
        return data

    raw = manifest.stage("data", load_data)

    def normalize() -> Dataset:
        normalized, stats = normalize_dataset(
            raw,
            settings.normalize.baseline_portion,
            settings.normalize.eps,
            settings.normalize.clip,
        )
        save_baseline_stats(
            stats, raw.feature_schema.feature_names, out / "baseline_stats.csv"
        )
        write_dataset(normalized, out / "normalized.csv")
        manifest.add_output(out / "baseline_stats.csv")
        manifest.add_output(out / "normalized.csv")
        return normalized

    normalized = manifest.stage("normalize", normalize)

    def train_stage() -> tuple[Any, TrainingLog]:
        trainer = Trainer(
            normalized,
            settings.generator,
            settings.critic,
            settings.gan.model_copy(update={"seed": seeds["train"]}),
            settings.normalize.clip,
            out / "checkpoints",
        )
        model, log = trainer.run()
        write_training_log(log, out / "training_log.csv")
        manifest.add_output(out / "training_log.csv")
        return model, log

    model, log = manifest.stage("train", train_stage)

    def generate_stage() -> Dataset:
        synthetic = synthesize_dataset(model, normalized, seeds["generate"])
        write_dataset(synthetic, out / "synthetic.csv")
        manifest.add_output(out / "synthetic.csv")
        return synthetic

    synthetic = manifest.stage("generate", generate_stage)

    def energy_stage() -> tuple[pd.DataFrame, pd.DataFrame]:
        diagnostics: list[dict[str, Any]] = []
        real_table = energy_table(
            normalized, transitions, settings.sbp, settings.run.threads, diagnostics
        )
        for record in diagnostics:
            record["source"] = "real"
        synth_diagnostics: list[dict[str, Any]] = []
        synth_table = energy_table(
            synthetic,
            transitions,
            settings.sbp,
            settings.run.threads,
            synth_diagnostics,
        )
        for record in synth_diagnostics:
            record["source"] = "synthetic"
        write_energy_table(real_table, out / "energy_real.csv")
        write_energy_table(synth_table, out / "energy_synth.csv")
        write_jsonl(out / "sbp_diagnostics.jsonl", diagnostics + synth_diagnostics)
        for name in ("energy_real.csv", "energy_synth.csv", "sbp_diagnostics.jsonl"):
            manifest.add_output(out / name)
        return real_table, synth_table

    real_table, synth_table = manifest.stage("energy", energy_stage)

    def compare_stage() -> ComparisonReport:
        report = compare_tables(real_table, synth_table)
        write_json(out / "comparison.json", report.model_dump(mode="json"))
        manifest.add_output(out / "comparison.json")
        return report

    report = manifest.stage("compare", compare_stage)

    def report_stage() -> None:
        clip = settings.normalize.clip
        features = feature_report(normalized, synthetic, (clip.lo, clip.hi))
        for path in write_feature_report(features, out):
            manifest.add_output(path)
        stability = training_stability(log) if log.records else None
        if stability is not None:
            write_json(
                out / "training_stability.json", stability.model_dump(mode="json")
            )
            manifest.add_output(out / "training_stability.json")
        if plots:
            from .plots import write_report_plots

            for path in write_report_plots(out / "plots", report, features, log):
                manifest.add_output(path)

    manifest.stage("report", report_stage)
    logger.info(
        f"Experiment finished: direction agreement={report.direction_agreement}, "
        f"rank correlation={report.rank_correlation}"
    )
    return report


__all__ = [
    "TIE_TOLERANCE",
    "HISTOGRAM_BINS",
    "ParticipantMismatchError",
    "TooFewParticipantsError",
    "EmptyColumnError",
    "CohortParameters",
    "build_cohort_config",
    "cohort_parameters",
    "generate_virtual_cohort",
    "cohort_oracle_energies",
    "direction_agreement",
    "rank_correlation",
    "group_summary",
    "compare_tables",
    "FeatureReport",
    "feature_table",
    "feature_report",
    "write_feature_report",
    "TrainingStability",
    "moving_average",
    "training_stability",
    "STAGES",
    "package_versions",
    "Manifest",
    "run_experiment",
]
