"""Utility functions for the EEG SBP validator.

Logging setup, seed derivation and small file helpers shared by the pipeline
stages and the command-line interface.
"""

import json
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger

LOG_LEVEL_ENV = "EEG_SBP_LOG_LEVEL"

VALID_LOG_LEVELS = [
    "TRACE",
    "DEBUG",
    "INFO",
    "SUCCESS",
    "WARNING",
    "ERROR",
    "CRITICAL",
]


def resolve_log_level(level: str | None = None) -> str:
    """Resolve the effective log level.

    An explicit level wins over the ``EEG_SBP_LOG_LEVEL`` environment variable.
    Unknown levels fall back to ``INFO``.

    Args:
        level: Explicit level, usually from ``--log-level``

    Returns:
        Upper-cased loguru level name
    """
    candidate = (level or os.getenv(LOG_LEVEL_ENV, "INFO")).upper()
    if candidate not in VALID_LOG_LEVELS:
        logger.warning(f"Unknown log level '{candidate}', using INFO")
        return "INFO"
    return candidate


def setup_logging(level: str | None = None) -> str:
    """Configure the loguru stderr sink.

    Args:
        level: Explicit level; see :func:`resolve_log_level`

    Returns:
        The level that was applied
    """
    log_level = resolve_log_level(level)

    # Remove default logger
    logger.remove()
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:"
        "<cyan>{line}</cyan> - <level>{message}</level>",
        colorize=True,
        backtrace=True,
        diagnose=False,
    )
    logger.debug(f"Logging configured with level: {log_level}")
    return log_level


def derive_seed(global_seed: int, stage: str) -> int:
    """Derive an independent 32-bit seed for a named pipeline stage.

    The same ``(global_seed, stage)`` pair always yields the same seed, and
    different stages get statistically independent streams.

    Args:
        global_seed: The single seed a run is started with
        stage: Stage name, e.g. ``"train"`` or ``"generate"``

    Returns:
        Non-negative integer seed
    """
    key = [int(b) for b in stage.encode("utf-8")]
    sequence = np.random.SeedSequence(entropy=global_seed, spawn_key=key)
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def write_json(path: Path, payload: dict[str, Any]) -> None:
    """Write ``payload`` as indented, key-sorted JSON with a trailing newline."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def write_jsonl(path: Path, records: list[dict[str, Any]]) -> None:
    """Write one JSON object per line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
