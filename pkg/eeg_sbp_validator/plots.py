"""SVG figures for experiment reports.

Figures are rendered with the non-interactive Agg backend. The SVG hash salt
and date metadata are fixed so identical inputs produce identical files.
"""

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from loguru import logger  # noqa: E402

from .harness import FeatureReport, moving_average  # noqa: E402
from .models import ComparisonReport, TrainingLog  # noqa: E402

if TYPE_CHECKING:
    from matplotlib.figure import Figure

SVG_HASH_SALT = "eeg-sbp-validator"
MOVING_AVERAGE_WINDOW = 50


def _save(figure: "Figure", path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        figure.savefig(path, format="svg", metadata={"Date": None})
    plt.close(figure)
    logger.debug(f"Wrote figure {path}")
    return path


def plot_training_curves(
    log: TrainingLog, path: Path, window: int = MOVING_AVERAGE_WINDOW
) -> Path:
    """Wasserstein estimate and gradient penalty per critic update."""
    wasserstein = log.wasserstein_series()
    penalty = log.grad_penalty_series()
    steps = np.arange(len(wasserstein))
    figure, (top, bottom) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    panels = (
        (top, wasserstein, "tab:blue", "Wasserstein estimate"),
        (bottom, penalty, "tab:orange", "gradient penalty"),
    )
    for ax, series, color, ylabel in panels:
        ax.plot(steps, series, color=color, alpha=0.3, linewidth=0.8, label="raw")
        smoothed = moving_average(series, window)
        ax.plot(steps, smoothed, color=color, label="moving average")
        ax.set_ylabel(ylabel)
        ax.legend(loc="upper right")
    bottom.set_xlabel("critic update")
    figure.tight_layout()
    return _save(figure, path)


def plot_feature_histograms(report: FeatureReport, path: Path) -> Path:
    """Overlaid real and synthetic histograms, one panel per feature."""
    edges = np.asarray(report.bin_edges)
    centers = (edges[:-1] + edges[1:]) / 2.0
    widths = np.diff(edges)
    figure, axes = plt.subplots(
        1, len(report.features), figsize=(4 * len(report.features), 3.5), squeeze=False
    )
    for ax, feature in zip(axes[0], report.features, strict=True):
        for source, color in (("real", "tab:blue"), ("synthetic", "tab:red")):
            counts = np.asarray(report.histograms[source][feature], dtype=np.float64)
            density = counts / max(counts.sum(), 1.0) / widths
            ax.bar(
                centers, density, width=widths, color=color, alpha=0.45, label=source
            )
        ax.set_title(feature)
        ax.set_xlabel("normalized value")
    axes[0][0].set_ylabel("density")
    axes[0][0].legend()
    figure.tight_layout()
    return _save(figure, path)


def plot_group_energies(report: ComparisonReport, path: Path) -> Path:
    """Group mean +/- std of the transport energy per transition and source."""
    labels = report.transitions
    x = np.arange(len(labels))
    width = 0.38
    figure, ax = plt.subplots(figsize=(6, 4))
    bars = ((-width / 2, "real", "tab:blue"), (width / 2, "synthetic", "tab:red"))
    for offset, source, color in bars:
        summaries = report.summaries.get(source, {})
        means = [
            summaries[label].mean if label in summaries else np.nan for label in labels
        ]
        stds = [
            summaries[label].std if label in summaries else 0.0 for label in labels
        ]
        ax.bar(
            x + offset,
            means,
            width,
            yerr=stds,
            capsize=4,
            color=color,
            alpha=0.8,
            label=source,
        )
    ax.set_xticks(x, labels)
    ax.set_ylabel("transport energy")
    ax.legend()
    figure.tight_layout()
    return _save(figure, path)


def plot_participant_trends(report: ComparisonReport, path: Path) -> Path:
    """Per-participant energy across transitions, real against synthetic."""
    labels = report.transitions
    x = np.arange(len(labels))
    figure, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, source in zip(axes, ("real", "synthetic"), strict=True):
        table = getattr(report, source)
        for k, participant in enumerate(report.participants):
            energies = [table[label][k] for label in labels]
            ax.plot(x, energies, marker="o", label=participant)
        ax.set_xticks(x, labels)
        ax.set_title(source)
    axes[0].set_ylabel("transport energy")
    if len(report.participants) <= 12:
        axes[1].legend(fontsize=7, loc="upper left")
    figure.tight_layout()
    return _save(figure, path)


def write_report_plots(
    output_dir: Path,
    report: ComparisonReport,
    features: FeatureReport | None = None,
    log: TrainingLog | None = None,
) -> list[Path]:
    """Write every available report figure and return their paths."""
    paths = [
        plot_group_energies(report, output_dir / "group_energies.svg"),
        plot_participant_trends(report, output_dir / "participant_trends.svg"),
    ]
    if features is not None:
        paths.append(
            plot_feature_histograms(features, output_dir / "feature_histograms.svg")
        )
    if log is not None and log.records:
        paths.append(plot_training_curves(log, output_dir / "training_curves.svg"))
    logger.info(f"Wrote {len(paths)} figures to {output_dir}")
    return paths


__all__ = [
    "MOVING_AVERAGE_WINDOW",
    "plot_training_curves",
    "plot_feature_histograms",
    "plot_group_energies",
    "plot_participant_trends",
    "write_report_plots",
]
