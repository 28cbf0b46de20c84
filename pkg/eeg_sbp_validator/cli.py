"""Command-line interface for the EEG SBP validator.

Every subcommand resolves its settings from defaults, an optional config file,
``--set`` overrides and dedicated flags, writes a manifest next to its outputs
and maps failures to exit codes: 0 on success, 1 for invalid input or usage,
2 for runtime failures.
"""

import argparse
import json
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

from loguru import logger

from . import __version__
from .adaptive import (
    calibrate_thresholds,
    cohort_stream,
    read_stream,
    replay,
    simulate,
    write_trace,
)
from .config import ExperimentSettings, resolve_settings
from .dataset import feature_statistics, load_dataset, write_dataset
from .exceptions import ComputationFailure, EEGSBPError, ValidationFailure
from .gan import Trainer, read_training_log, synthesize_dataset, write_training_log
from .harness import (
    Manifest,
    cohort_oracle_energies,
    compare_tables,
    feature_report,
    generate_virtual_cohort,
    run_experiment,
    training_stability,
    write_feature_report,
)
from .models import ComparisonReport, Dataset, EmpiricalDistribution, SampleSpace
from .networks import load_generator
from .normalize import normalize_dataset, save_baseline_stats
from .selftest import run_selftest
from .transport import (
    energy_table,
    group_distribution,
    read_energy_table,
    write_energy_table,
)
from .utils import setup_logging, write_json, write_jsonl

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2

LOG_LEVELS = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message: str) -> NoReturn:
        """Print usage and exit with the invalid-input code."""
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _global_options() -> argparse.ArgumentParser:
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument(
        "--config",
        type=Path,
        default=None,
        metavar="FILE",
        help="Flat key = value config file",
    )
    options.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config value (repeatable), e.g. sbp.epsilon=0.1",
    )
    options.add_argument("--seed", type=int, default=None, help="Global seed")
    options.add_argument(
        "--threads", type=int, default=None, help="Parallel transport solves"
    )
    options.add_argument(
        "--strict",
        action="store_true",
        help="Fail when a transport solve does not converge",
    )
    options.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default=None,
        help="Set logging level (overrides EEG_SBP_LOG_LEVEL environment variable)",
    )
    return options


def build_parser() -> ArgumentParser:
    """Parser with every subcommand."""
    parser = ArgumentParser(
        prog="eeg-sbp-validator",
        description="Validate synthetic EEG features with Schrodinger-bridge "
        "transport energies",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Environment Variables:
  EEG_SBP_LOG_LEVEL      Set logging level (DEBUG, INFO, WARNING, ERROR)

Examples:
  eeg-sbp-validator cohort --out cohort.csv
  eeg-sbp-validator normalize --in cohort.csv --out normalized.csv
  eeg-sbp-validator energy --in normalized.csv --transitions P1:P2 --out e.csv
  eeg-sbp-validator compare --real energy_real.csv --synth energy_synth.csv
  eeg-sbp-validator run --out experiment --set gan.generator_steps=300
  eeg-sbp-validator selftest
        """,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
        help="Show version information and exit",
    )
    common = _global_options()
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        return commands.add_parser(
            name, parents=[common], help=help_text, description=help_text
        )

    ingest = command("ingest", "Validate a dataset CSV and summarize it")
    ingest.add_argument("--in", dest="input", type=Path, required=True)
    ingest.add_argument(
        "--out", type=Path, default=None, help="Summary JSON (default: stdout)"
    )

    normalize = command("normalize", "Baseline-normalize a raw dataset")
    normalize.add_argument("--in", dest="input", type=Path, required=True)
    normalize.add_argument("--out", type=Path, required=True, help="Normalized CSV")
    normalize.add_argument(
        "--stats",
        type=Path,
        default=None,
        help="Baseline statistics CSV (default: next to --out)",
    )

    cohort = command("cohort", "Generate a virtual Gaussian cohort")
    cohort.add_argument("--out", type=Path, required=True, help="Raw dataset CSV")
    cohort.add_argument(
        "--oracle", type=Path, default=None, help="Closed-form energy table CSV"
    )

    train = command("train", "Train the conditional generator")
    train.add_argument(
        "--in", dest="input", type=Path, required=True, help="Normalized CSV"
    )
    train.add_argument("--out", type=Path, required=True, help="Output directory")

    generate = command("generate", "Synthesize a dataset from a checkpoint")
    generate.add_argument("--checkpoint", type=Path, required=True)
    generate.add_argument(
        "--like",
        type=Path,
        required=True,
        help="Normalized CSV whose group sizes are matched",
    )
    generate.add_argument("--out", type=Path, required=True, help="Synthetic CSV")

    energy = command("energy", "Per-participant transport energies")
    energy.add_argument(
        "--in", dest="input", type=Path, required=True, help="Normalized CSV"
    )
    energy.add_argument("--transitions", default=None, help="e.g. P1:P2,P1:P3")
    energy.add_argument("--out", type=Path, required=True, help="Energy table CSV")
    energy.add_argument(
        "--diagnostics", type=Path, default=None, help="Per-solve diagnostics JSONL"
    )

    compare = command("compare", "Compare real and synthetic energy tables")
    compare.add_argument("--real", type=Path, required=True)
    compare.add_argument("--synth", type=Path, required=True)
    compare.add_argument("--out", type=Path, default=Path("comparison.json"))

    report = command("report", "Rebuild tables and plots of an experiment directory")
    report.add_argument("--dir", dest="directory", type=Path, required=True)

    run = command("run", "Run the full pipeline on a virtual cohort or a dataset")
    run.add_argument(
        "--in", dest="input", type=Path, default=None, help="Raw dataset CSV"
    )
    run.add_argument("--out", type=Path, required=True, help="Output directory")
    run.add_argument("--no-plots", action="store_true", help="Skip SVG figures")

    sim = command("simulate", "Closed-loop controller simulation")
    sim.add_argument(
        "--reference",
        type=Path,
        required=True,
        help="Normalized CSV holding the baseline",
    )
    sim.add_argument("--participant", required=True)
    sim.add_argument(
        "--stream",
        type=Path,
        default=None,
        help="Stream CSV (default: cohort-derived ramp)",
    )
    sim.add_argument(
        "--calibrate",
        action="store_true",
        help="Set thresholds from this run's energies",
    )
    sim.add_argument("--out", type=Path, required=True, help="Trace CSV")

    command("selftest", "Run the built-in numerical checks")
    return parser


def parse_arguments(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    return build_parser().parse_args(argv)


def settings_from_args(args: argparse.Namespace) -> ExperimentSettings:
    """Resolve settings with flags taking precedence over ``--set`` and files."""
    flags: dict[str, str] = {}
    if args.seed is not None:
        flags["run.seed"] = str(args.seed)
    if args.threads is not None:
        flags["run.threads"] = str(args.threads)
    if args.strict:
        flags["sbp.strict"] = "true"
    if getattr(args, "transitions", None):
        flags["run.transitions"] = args.transitions
    return resolve_settings(args.config, args.overrides, flags)


def manifest_path(out: Path, directory: bool) -> Path:
    """``<dir>/manifest.json`` or ``<file stem>.manifest.json`` beside a file."""
    if directory:
        return out / "manifest.json"
    return out.with_name(f"{out.stem}.manifest.json")


def _load_normalized(path: Path, manifest: Manifest) -> Dataset:
    manifest.add_input("dataset", str(path))
    return load_dataset(path, space=SampleSpace.NORMALIZED)


def cmd_ingest(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Summarize a dataset."""
    dataset = load_dataset(args.input)
    counts = {
        pid: {
            portion.value: int(dataset.row_mask(pid, portion).sum())
            for portion in dataset.portions_present()
        }
        for pid in dataset.participants()
    }
    stats = feature_statistics(dataset)
    summary = {
        "samples": len(dataset),
        "features": list(dataset.feature_schema.feature_names),
        "participants": dataset.participants(),
        "portions": [p.value for p in dataset.portions_present()],
        "group_counts": counts,
        "mean": list(stats.mean),
        "std": list(stats.std),
    }
    if args.out is None:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK
    manifest = Manifest(manifest_path(args.out, False), "ingest", settings.flatten())
    manifest.add_input("dataset", str(args.input))
    write_json(args.out, summary)
    manifest.add_output(args.out)
    return EXIT_OK


def cmd_normalize(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Normalize a raw dataset against each participant's baseline."""
    manifest = Manifest(manifest_path(args.out, False), "normalize", settings.flatten())
    manifest.add_input("dataset", str(args.input))
    dataset = load_dataset(args.input)
    config = settings.normalize
    normalized, stats = normalize_dataset(
        dataset, config.baseline_portion, config.eps, config.clip
    )
    stats_path = args.stats or args.out.with_name("baseline_stats.csv")
    write_dataset(normalized, args.out)
    save_baseline_stats(stats, dataset.feature_schema.feature_names, stats_path)
    manifest.add_output(args.out)
    manifest.add_output(stats_path)
    return EXIT_OK


def cmd_cohort(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Write a virtual cohort and optionally its closed-form energies."""
    manifest = Manifest(manifest_path(args.out, False), "cohort", settings.flatten())
    cfg = settings.cohort.model_copy(update={"seed": settings.stage_seed("cohort")})
    manifest.data["seeds"] = {"global": settings.run.seed, "cohort": cfg.seed}
    write_dataset(generate_virtual_cohort(cfg), args.out)
    manifest.add_output(args.out)
    if args.oracle is not None:
        oracle = cohort_oracle_energies(cfg, settings.run.parsed_transitions())
        write_energy_table(oracle, args.oracle)
        manifest.add_output(args.oracle)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Train a generator and write its log and checkpoints."""
    manifest = Manifest(manifest_path(args.out, True), "train", settings.flatten())
    dataset = _load_normalized(args.input, manifest)
    seed = settings.stage_seed("train")
    manifest.data["seeds"] = {"global": settings.run.seed, "train": seed}
    trainer = Trainer(
        dataset,
        settings.generator,
        settings.critic,
        settings.gan.model_copy(update={"seed": seed}),
        settings.normalize.clip,
        args.out / "checkpoints",
    )
    _, log = manifest.stage("train", trainer.run)
    write_training_log(log, args.out / "training_log.csv")
    manifest.add_output(args.out / "training_log.csv")
    manifest.add_output(args.out / "checkpoints" / "generator.ckpt")
    if log.records:
        write_json(
            args.out / "training_stability.json",
            training_stability(log).model_dump(mode="json"),
        )
        manifest.add_output(args.out / "training_stability.json")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Synthesize a dataset with the group sizes of a reference file."""
    manifest = Manifest(manifest_path(args.out, False), "generate", settings.flatten())
    manifest.add_input("checkpoint", str(args.checkpoint))
    like = _load_normalized(args.like, manifest)
    seed = settings.stage_seed("generate")
    manifest.data["seeds"] = {"global": settings.run.seed, "generate": seed}
    synthetic = synthesize_dataset(load_generator(args.checkpoint), like, seed)
    write_dataset(synthetic, args.out)
    manifest.add_output(args.out)
    return EXIT_OK


def cmd_energy(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Compute and write an energy table."""
    manifest = Manifest(manifest_path(args.out, False), "energy", settings.flatten())
    dataset = _load_normalized(args.input, manifest)
    diagnostics: list[dict[str, Any]] = []
    table = manifest.stage(
        "energy",
        lambda: energy_table(
            dataset,
            settings.run.parsed_transitions(),
            settings.sbp,
            settings.run.threads,
            diagnostics,
        ),
    )
    write_energy_table(table, args.out)
    manifest.add_output(args.out)
    if args.diagnostics is not None:
        write_jsonl(args.diagnostics, diagnostics)
        manifest.add_output(args.diagnostics)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Write a comparison report of two energy tables."""
    manifest = Manifest(manifest_path(args.out, False), "compare", settings.flatten())
    manifest.add_input("real", str(args.real))
    manifest.add_input("synthetic", str(args.synth))
    report = compare_tables(read_energy_table(args.real), read_energy_table(args.synth))
    write_json(args.out, report.model_dump(mode="json"))
    manifest.add_output(args.out)
    print(
        f"direction agreement: {report.direction_agreement}; "
        f"rank correlation: {report.rank_correlation}"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Rebuild feature tables and plots from experiment artifacts."""
    from .plots import write_report_plots

    directory: Path = args.directory
    manifest = Manifest(
        directory / "report.manifest.json", "report", settings.flatten()
    )
    normalized = _load_normalized(directory / "normalized.csv", manifest)
    synthetic = load_dataset(directory / "synthetic.csv", space=SampleSpace.NORMALIZED)
    manifest.add_input("synthetic", str(directory / "synthetic.csv"))
    clip = settings.normalize.clip
    features = feature_report(normalized, synthetic, (clip.lo, clip.hi))
    for path in write_feature_report(features, directory):
        manifest.add_output(path)

    comparison_path = directory / "comparison.json"
    if comparison_path.is_file():
        text = comparison_path.read_text("utf-8")
        report = ComparisonReport.model_validate_json(text)
    else:
        report = compare_tables(
            read_energy_table(directory / "energy_real.csv"),
            read_energy_table(directory / "energy_synth.csv"),
        )
    log_path = directory / "training_log.csv"
    log = read_training_log(log_path) if log_path.is_file() else None
    for path in write_report_plots(directory / "plots", report, features, log):
        manifest.add_output(path)
    return EXIT_OK


def cmd_run(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Run the whole pipeline."""
    dataset = load_dataset(args.input) if args.input is not None else None
    report = run_experiment(settings, args.out, dataset, plots=not args.no_plots)
    print(
        f"direction agreement: {report.direction_agreement}; "
        f"rank correlation: {report.rank_correlation}"
    )
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Simulate the closed loop for one participant."""
    manifest = Manifest(manifest_path(args.out, False), "simulate", settings.flatten())
    dataset = _load_normalized(args.reference, manifest)
    reference: EmpiricalDistribution = group_distribution(
        dataset, args.participant, settings.normalize.baseline_portion
    )
    if args.stream is not None:
        manifest.add_input("stream", str(args.stream))
        stream = read_stream(args.stream, dataset.feature_schema)
    else:
        seed = settings.stage_seed("simulate")
        manifest.data["seeds"] = {"global": settings.run.seed, "simulate": seed}
        stream = cohort_stream(dataset, args.participant, seed=seed)
    trace = simulate(
        stream, reference, settings.window, settings.controller, settings.sbp
    )
    if args.calibrate and trace:
        cfg = calibrate_thresholds([d.energy for d in trace])
        trace = replay([d.energy for d in trace], cfg, [d.index for d in trace])
    write_trace(trace, args.out)
    manifest.add_output(args.out)
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace, settings: ExperimentSettings) -> int:
    """Run the built-in checks."""
    passed, total = run_selftest()
    print(f"{passed}/{total} checks passed")
    return EXIT_OK if passed == total else EXIT_FAILURE


COMMANDS: dict[str, Callable[[argparse.Namespace, ExperimentSettings], int]] = {
    "ingest": cmd_ingest,
    "normalize": cmd_normalize,
    "cohort": cmd_cohort,
    "train": cmd_train,
    "generate": cmd_generate,
    "energy": cmd_energy,
    "compare": cmd_compare,
    "report": cmd_report,
    "run": cmd_run,
    "simulate": cmd_simulate,
    "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INVALID

    setup_logging(args.log_level)
    try:
        settings = settings_from_args(args)
        return COMMANDS[args.command](args, settings)
    except ValidationFailure as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    except ComputationFailure as e:
        logger.error(f"Computation failed: {e}")
        return EXIT_FAILURE
    except EEGSBPError as e:
        logger.error(f"Error: {e}")
        return EXIT_FAILURE
    except OSError as e:
        logger.error(f"File error: {e}")
        return EXIT_INVALID


def cli_main() -> None:
    """Console-script entry point."""
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted by user")
        sys.exit(EXIT_INVALID)


__all__ = [
    "EXIT_OK",
    "EXIT_INVALID",
    "EXIT_FAILURE",
    "ArgumentParser",
    "build_parser",
    "parse_arguments",
    "settings_from_args",
    "manifest_path",
    "COMMANDS",
    "main",
    "cli_main",
]
