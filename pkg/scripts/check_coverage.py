#!/usr/bin/env python3
"""Per-module coverage gate for the EEG SBP validator.

Reads the ``.coverage`` data left by ``pytest --cov`` and fails when a module
drops below its threshold. The numerical core is held to a higher bar than
the plotting and command-line layers.
"""

import sys
from pathlib import Path

try:
    import coverage
except ImportError:
    print("coverage is not installed; run: pip install -e '.[dev]'")
    sys.exit(1)

PACKAGE = Path("eeg_sbp_validator")

THRESHOLDS = {
    "models.py": 95,
    "dataset.py": 90,
    "normalize.py": 95,
    "transport.py": 90,
    "autodiff.py": 95,
    "networks.py": 90,
    "gan.py": 85,
    "harness.py": 85,
    "adaptive.py": 90,
    "config.py": 95,
    "selftest.py": 90,
    "plots.py": 75,
    "cli.py": 70,
    "utils.py": 100,
}


def module_coverage(cov: coverage.Coverage, path: Path) -> tuple[int, int, list[int]]:
    """Return ``(covered, total, missing_lines)`` for one file."""
    _, statements, _, missing, _ = cov.analysis2(str(path))
    return len(statements) - len(missing), len(statements), list(missing)


def check_thresholds() -> bool:
    """Print a per-module table and report whether every gate passed."""
    cov = coverage.Coverage()
    try:
        cov.load()
    except coverage.CoverageException as e:
        print(f"Could not load coverage data: {e}")
        return False

    passed = True
    covered_total = lines_total = 0
    print(f"{'module':<16}{'cover':>8}{'gate':>6}  missing")
    for name, threshold in THRESHOLDS.items():
        path = PACKAGE / name
        if not path.exists():
            print(f"{name:<16}{'absent':>8}")
            continue
        covered, total, missing = module_coverage(cov, path)
        percent = 100.0 * covered / total if total else 100.0
        covered_total += covered
        lines_total += total
        ok = percent >= threshold
        passed &= ok
        detail = "" if ok else ", ".join(map(str, missing[:12]))
        print(f"{name:<16}{percent:>7.1f}%{threshold:>5}%  {detail}")

    overall = 100.0 * covered_total / lines_total if lines_total else 100.0
    print(f"\noverall {overall:.1f}% of {lines_total} statements")
    print("all gates passed" if passed else "some modules are below their gate")
    return passed


def main() -> None:
    """Exit non-zero when a gate fails."""
    sys.exit(0 if check_thresholds() else 1)


if __name__ == "__main__":
    main()
