"""Experiment configuration: flat ``key = value`` files and overrides.

Keys are dotted, ``<section>.<field>``, where the section names one of the
settings models (``sbp.epsilon``, ``gan.lambda_var``, ``cohort.num_participants``).
Values are parsed as JSON when possible (numbers, booleans, lists, objects);
a bare comma-separated value becomes a list; anything else stays a string.
"""

import json
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel, Field, ValidationError, field_validator

from .exceptions import InvalidConfigError
from .models import (
    ControllerConfig,
    CriticConfig,
    GeneratorConfig,
    NormalizeConfig,
    SBPConfig,
    TrainConfig,
    Transition,
    VirtualCohortConfig,
    WindowConfig,
    parse_transition,
    transition_label,
)
from .utils import derive_seed


class RunOptions(BaseModel):
    """Options shared by every stage of a run.

    Attributes:
        seed: The single global seed; every stage seed is derived from it
        threads: Worker count for independent transport solves
        transitions: Transitions analysed, e.g. ``P1:P2``
    """

    seed: int = Field(default=7, ge=0, description="Global seed")
    threads: int = Field(default=1, ge=1, description="Parallel transport solves")
    transitions: tuple[str, ...] = Field(default=("P1:P2", "P1:P3"), min_length=1)

    @field_validator("transitions", mode="before")
    @classmethod
    def split_transitions(cls, v: Any) -> Any:
        """Accept ``"P1:P2,P1:P3"`` as well as a list."""
        if isinstance(v, str):
            return tuple(part.strip() for part in v.split(",") if part.strip())
        return v

    @field_validator("transitions")
    @classmethod
    def validate_transitions(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        """Normalize every transition to ``P1->P2`` form."""
        return tuple(transition_label(parse_transition(text)) for text in v)

    def parsed_transitions(self) -> list[Transition]:
        """Transitions as portion pairs."""
        return [parse_transition(text) for text in self.transitions]


class ExperimentSettings(BaseModel):
    """Every configurable value of the pipeline, grouped by section."""

    run: RunOptions = Field(default_factory=RunOptions)
    normalize: NormalizeConfig = Field(default_factory=NormalizeConfig)
    sbp: SBPConfig = Field(default_factory=SBPConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    critic: CriticConfig = Field(default_factory=CriticConfig)
    gan: TrainConfig = Field(default_factory=TrainConfig)
    cohort: VirtualCohortConfig = Field(default_factory=VirtualCohortConfig)
    window: WindowConfig = Field(default_factory=WindowConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)

    @classmethod
    def from_flat(cls, values: dict[str, str]) -> "ExperimentSettings":
        """Build settings from dotted keys over the defaults.

        Raises:
            InvalidConfigError: On unknown sections or fields, or invalid values
        """
        return cls().with_overrides(values)

    def with_overrides(self, values: dict[str, str]) -> "ExperimentSettings":
        """Return a copy with dotted-key overrides applied and revalidated.

        Raises:
            InvalidConfigError: On unknown sections or fields, or invalid values
        """
        nested = self.model_dump()
        for key, text in values.items():
            section, _, field_name = key.partition(".")
            if section not in type(self).model_fields:
                raise InvalidConfigError(
                    f"Unknown config section '{section}' in key '{key}'"
                )
            section_model = type(getattr(self, section))
            if not field_name or field_name not in section_model.model_fields:
                raise InvalidConfigError(f"Unknown config key '{key}'")
            nested[section][field_name] = parse_value(text)
        try:
            return type(self).model_validate(nested)
        except ValidationError as e:
            raise InvalidConfigError(f"Invalid configuration: {e}") from e

    def flatten(self) -> dict[str, Any]:
        """JSON-ready ``{"section.field": value}`` view, sorted by key."""
        flat: dict[str, Any] = {}
        for section, values in self.model_dump(mode="json").items():
            for name, value in values.items():
                flat[f"{section}.{name}"] = value
        return dict(sorted(flat.items()))

    def stage_seed(self, stage: str) -> int:
        """Seed of a named stage derived from the global seed."""
        return derive_seed(self.run.seed, stage)


def parse_value(text: str) -> Any:
    """Parse one config value."""
    stripped = text.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    lowered = stripped.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null", ""):
        return None
    if "," in stripped:
        return [parse_value(part) for part in stripped.split(",")]
    return stripped


def load_config_file(path: Path | str) -> dict[str, str]:
    """Read a flat ``key = value`` file.

    Blank lines and lines starting with ``#`` are ignored.

    Raises:
        InvalidConfigError: If the file is missing or a line has no ``=``
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise InvalidConfigError(f"Config file not found: {file_path}")
    values: dict[str, str] = {}
    lines = file_path.read_text(encoding="utf-8").splitlines()
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidConfigError(f"{file_path}:{number}: expected 'key = value'")
        values[key.strip()] = value.strip()
    logger.debug(f"Read {len(values)} config values from {file_path}")
    return values


def parse_overrides(items: list[str]) -> dict[str, str]:
    """Parse ``--set key=value`` items.

    Raises:
        InvalidConfigError: If an item has no ``=``
    """
    values: dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise InvalidConfigError(f"Override '{item}' must look like key=value")
        values[key.strip()] = value.strip()
    return values


def resolve_settings(
    config_path: Path | str | None = None,
    overrides: list[str] | None = None,
    flags: dict[str, str] | None = None,
) -> ExperimentSettings:
    """Defaults < config file < ``--set`` overrides < dedicated flags.

    Raises:
        InvalidConfigError: On any invalid source
    """
    values: dict[str, str] = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    values.update(parse_overrides(overrides or []))
    values.update(flags or {})
    return ExperimentSettings.from_flat(values)


__all__ = [
    "RunOptions",
    "ExperimentSettings",
    "parse_value",
    "load_config_file",
    "parse_overrides",
    "resolve_settings",
]
