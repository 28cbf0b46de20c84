"""Tests for the command-line interface."""

import json
from pathlib import Path

import numpy as np
import pytest

from eeg_sbp_validator import cli
from eeg_sbp_validator.adaptive import read_trace
from eeg_sbp_validator.cli import (
    EXIT_FAILURE,
    EXIT_INVALID,
    EXIT_OK,
    main,
    manifest_path,
)
from eeg_sbp_validator.dataset import write_dataset
from eeg_sbp_validator.models import SampleSpace
from eeg_sbp_validator.transport import read_energy_table, write_energy_table
from tests.utils import (
    FEATURES,
    REFERENCE_REAL_ENERGIES,
    REFERENCE_SYNTHETIC_ENERGIES,
    energy_frame,
    gaussian_dataset,
)


def read_json(path: Path) -> dict:
    """Parse a JSON file."""
    return json.loads(path.read_text(encoding="utf-8"))


class TestArguments:
    """Test cases for argument handling and exit codes."""

    def test_missing_command(self):
        """Test that a missing subcommand is a usage error."""
        assert main([]) == EXIT_INVALID

    def test_help(self, capsys: pytest.CaptureFixture[str]):
        """Test that help exits cleanly."""
        assert main(["--help"]) == EXIT_OK
        assert "selftest" in capsys.readouterr().out

    def test_unknown_option(self):
        """Test that an unknown flag is a usage error."""
        assert main(["compare", "--bogus"]) == EXIT_INVALID

    def test_unknown_config_key(self, tmp_path: Path):
        """Test that a bad --set key is invalid input."""
        out = str(tmp_path / "c.csv")
        code = main(["cohort", "--out", out, "--set", "sbp.nosuch=1"])
        assert code == EXIT_INVALID
        assert not (tmp_path / "c.csv").exists()

    def test_manifest_path(self):
        """Test manifest naming for file and directory outputs."""
        assert manifest_path(Path("out/energies.csv"), False) == Path(
            "out/energies.manifest.json"
        )
        assert manifest_path(Path("out/run"), True) == Path("out/run/manifest.json")


class TestCompareCommand:
    """Test cases for the compare subcommand."""

    @pytest.fixture
    def tables(self, tmp_path: Path) -> tuple[Path, Path]:
        """Reference real and synthetic energy tables on disk."""
        real = tmp_path / "energy_real.csv"
        synth = tmp_path / "energy_synth.csv"
        write_energy_table(energy_frame(REFERENCE_REAL_ENERGIES), real)
        write_energy_table(energy_frame(REFERENCE_SYNTHETIC_ENERGIES), synth)
        return real, synth

    def test_compare(
        self,
        tables: tuple[Path, Path],
        tmp_path: Path,
        capsys: pytest.CaptureFixture[str],
    ):
        """Test the report, the console summary and the manifest."""
        real, synth = tables
        out = tmp_path / "comparison.json"
        args = [
            "compare", "--real", str(real), "--synth", str(synth), "--out", str(out)
        ]  # fmt: skip
        assert main(args) == EXIT_OK
        assert read_json(out)["direction_agreement"] == pytest.approx(0.7)
        assert "direction agreement: 0.7" in capsys.readouterr().out

        manifest = read_json(tmp_path / "comparison.manifest.json")
        assert manifest["command"] == "compare"
        assert manifest["outputs"] == ["comparison.json"]
        assert manifest["inputs"] == {"real": str(real), "synthetic": str(synth)}

    def test_missing_table(self, tables: tuple[Path, Path], tmp_path: Path):
        """Test that a missing input file is invalid input."""
        real, _ = tables
        args = ["compare", "--real", str(real), "--synth", str(tmp_path / "absent.csv")]
        assert main([*args, "--out", str(tmp_path / "c.json")]) == EXIT_INVALID


class TestDatasetCommands:
    """Test cases for subcommands that read a dataset."""

    @pytest.fixture
    def normalized(self, tmp_path: Path) -> Path:
        """Small normalized dataset CSV."""
        path = tmp_path / "normalized.csv"
        dataset = gaussian_dataset(
            participants=3, samples=15, space=SampleSpace.NORMALIZED
        )
        write_dataset(dataset, path)
        return path

    def test_ingest_to_stdout(
        self, normalized: Path, capsys: pytest.CaptureFixture[str]
    ):
        """Test the dataset summary."""
        assert main(["ingest", "--in", str(normalized)]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["samples"] == 3 * 3 * 15
        assert summary["features"] == list(FEATURES)
        assert summary["group_counts"]["p02"] == {"P1": 15, "P2": 15, "P3": 15}

    def test_ingest_bad_file(self, tmp_path: Path):
        """Test that a malformed dataset is invalid input."""
        path = tmp_path / "bad.csv"
        path.write_text("participant_id,task_portion,theta\np01,P7,1.0\n")
        assert main(["ingest", "--in", str(path)]) == EXIT_INVALID

    def test_energy(self, normalized: Path, tmp_path: Path):
        """Test the energy table and its diagnostics."""
        out = tmp_path / "energies.csv"
        diagnostics = tmp_path / "diagnostics.jsonl"
        args = [
            "energy",
            "--in", str(normalized),
            "--transitions", "P1:P2",
            "--out", str(out),
            "--diagnostics", str(diagnostics),
            "--set", "sbp.epsilon=0.5",
            "--threads", "2",
        ]  # fmt: skip
        assert main(args) == EXIT_OK
        table = read_energy_table(out)
        assert list(table.columns) == ["P1->P2"]
        assert list(table.index) == ["p01", "p02", "p03"]
        assert np.all(table.to_numpy() > 0.0)
        assert len(diagnostics.read_text(encoding="utf-8").splitlines()) == 3
        manifest = read_json(tmp_path / "energies.manifest.json")
        assert manifest["stages"] == {"energy": "ok"}
        assert manifest["config"]["run.threads"] == 2

    def test_energy_not_converged(self, normalized: Path, tmp_path: Path):
        """Test that a strict non-converged solve is a runtime failure."""
        out = tmp_path / "energies.csv"
        args = [
            "energy",
            "--in", str(normalized),
            "--out", str(out),
            "--strict",
            "--set", "sbp.max_iterations=1",
        ]  # fmt: skip
        assert main(args) == EXIT_FAILURE
        manifest = read_json(tmp_path / "energies.manifest.json")
        assert manifest["failed_stage"] == "energy"
        assert not out.exists()

    def test_simulate_with_stream(self, normalized: Path, tmp_path: Path):
        """Test a short closed-loop run over a stream file."""
        stream = tmp_path / "stream.csv"
        rows = np.random.default_rng(0).normal(size=(12, 3))
        stream.write_text(
            ",".join(FEATURES)
            + "\n"
            + "".join(",".join(repr(float(v)) for v in row) + "\n" for row in rows)
        )
        out = tmp_path / "trace.csv"
        args = [
            "simulate",
            "--reference", str(normalized),
            "--participant", "p01",
            "--stream", str(stream),
            "--out", str(out),
            "--set", "window.capacity=10",
            "--set", "window.stride=2",
            "--set", "sbp.epsilon=0.5",
        ]  # fmt: skip
        assert main(args) == EXIT_OK
        assert [index for index, _, _ in read_trace(out)] == [9, 11]


class TestCohortCommand:
    """Test cases for the virtual cohort subcommand."""

    def test_cohort_with_oracle(self, tmp_path: Path):
        """Test the cohort file, the oracle table and the recorded seeds."""
        out = tmp_path / "cohort.csv"
        oracle = tmp_path / "oracle.csv"
        args = [
            "cohort",
            "--out", str(out),
            "--oracle", str(oracle),
            "--seed", "3",
            "--set", "cohort.num_participants=2",
            "--set", "cohort.samples_per_group=4",
        ]  # fmt: skip
        assert main(args) == EXIT_OK
        header = out.read_text(encoding="utf-8").splitlines()[0]
        assert header.startswith("participant_id,task_portion,")
        assert list(read_energy_table(oracle).columns) == ["P1->P2", "P1->P3"]
        manifest = read_json(tmp_path / "cohort.manifest.json")
        assert manifest["seeds"]["global"] == 3
        assert manifest["outputs"] == ["cohort.csv", "oracle.csv"]


class TestSelftestCommand:
    """Test cases for the selftest subcommand."""

    def test_all_passed(
        self, monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]
    ):
        """Test the summary line and success code."""
        monkeypatch.setattr(cli, "run_selftest", lambda: (4, 4))
        assert main(["selftest"]) == EXIT_OK
        assert "4/4 checks passed" in capsys.readouterr().out

    def test_failure(self, monkeypatch: pytest.MonkeyPatch):
        """Test that any failed check is a runtime failure."""
        monkeypatch.setattr(cli, "run_selftest", lambda: (3, 4))
        assert main(["selftest"]) == EXIT_FAILURE
