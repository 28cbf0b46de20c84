"""Conditional generator and packed critic networks, plus checkpoints.

Both networks condition on participant identity and task portion through
learned embedding tables that are looked up per row and concatenated with the
network input.

Checkpoint layout (little-endian)::

    8 bytes   magic b"EEGSBPCK"
    uint32    format version
    uint32    header length in bytes
    header    UTF-8 JSON: kind, architecture, conditions, parameter shapes,
              config echo
    payload   float64 parameters in layer order
"""

import json
import struct
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger

from .autodiff import (
    IndexArray,
    Mlp,
    Tensor,
    add_const,
    concat_cols,
    gather_rows,
    scale,
    tanh,
)
from .exceptions import ValidationFailure
from .models import (
    Activation,
    ClipRange,
    CriticConfig,
    DenseLayerSpec,
    FloatArray,
    GeneratorConfig,
    MlpSpec,
    TaskPortion,
)

CHECKPOINT_MAGIC = b"EEGSBPCK"
CHECKPOINT_VERSION = 1


class UnknownConditionError(ValidationFailure):
    """A participant or portion has no embedding row."""


class CheckpointFormatError(ValidationFailure):
    """A checkpoint file is truncated or not a checkpoint."""


class ConditionIndex:
    """Maps participant identifiers and portions to embedding rows."""

    def __init__(self, participants: Sequence[str]):
        """Index the participants in the given order; portions use P1-P4."""
        self.participants = list(participants)
        self._participant_rows = {pid: k for k, pid in enumerate(self.participants)}

    def participant_rows(self, participants: Sequence[str]) -> IndexArray:
        """Embedding rows of the given participants.

        Raises:
            UnknownConditionError: If a participant was not seen in training
        """
        try:
            rows = [self._participant_rows[p] for p in participants]
            return np.array(rows, dtype=np.intp)
        except KeyError as e:
            raise UnknownConditionError(f"Unknown participant {e.args[0]!r}") from e

    @staticmethod
    def portion_rows(portions: Sequence[TaskPortion]) -> IndexArray:
        """Embedding rows of the given portions."""
        return np.array([TaskPortion(p).index for p in portions], dtype=np.intp)


def _embedding(
    rng: np.random.Generator, rows: int, width: int, name: str
) -> Tensor:
    value = rng.normal(0.0, 1.0, size=(rows, width))
    return Tensor(value, requires_grad=True, name=name)


def generator_spec(config: GeneratorConfig, dimension: int) -> MlpSpec:
    """Trunk layout: input layer, residual blocks, identity output layer."""
    hidden = DenseLayerSpec(
        width=config.hidden_width, activation=config.activation, slope=config.slope
    )
    layers = [hidden]
    blocks: list[tuple[int, int]] = []
    for _ in range(config.residual_blocks):
        start = len(layers)
        layers.extend([hidden] * config.layers_per_block)
        blocks.append((start, len(layers)))
    layers.append(DenseLayerSpec(width=dimension, activation=Activation.IDENTITY))
    input_width = (
        config.latent_dim
        + config.participant_embedding_dim
        + config.portion_embedding_dim
    )
    return MlpSpec(
        input_width=input_width, layers=tuple(layers), residual_blocks=tuple(blocks)
    )


def critic_spec(
    config: CriticConfig, dimension: int, participant_dim: int, portion_dim: int
) -> MlpSpec:
    """Trunk layout: hidden layers then a scalar identity output."""
    layers = [
        DenseLayerSpec(width=width, activation=config.activation, slope=config.slope)
        for width in config.hidden_widths
    ]
    layers.append(DenseLayerSpec(width=1, activation=Activation.IDENTITY))
    input_width = config.pack_size * dimension + participant_dim + portion_dim
    return MlpSpec(input_width=input_width, layers=tuple(layers))


class GeneratorModel:
    """Conditional generator ``(z, participant, portion) -> feature vector``.

    The trunk output is squashed into the clip range by a scaled ``tanh``, so
    every generated coordinate lies inside ``[clip.lo, clip.hi]``.
    """

    def __init__(
        self,
        config: GeneratorConfig,
        participants: Sequence[str],
        dimension: int,
        clip: ClipRange | None = None,
        rng: np.random.Generator | None = None,
    ):
        """Initialize embeddings and trunk."""
        rng = rng or np.random.default_rng(0)
        self.config = config
        self.dimension = dimension
        self.clip = clip or ClipRange()
        self.conditions = ConditionIndex(participants)
        self.participant_embedding = _embedding(
            rng, len(self.conditions.participants),
            config.participant_embedding_dim, "generator.participant_embedding",
        )
        self.portion_embedding = _embedding(
            rng, len(TaskPortion), config.portion_embedding_dim,
            "generator.portion_embedding",
        )
        self.trunk = Mlp(generator_spec(config, dimension), rng, name="generator.trunk")

    def __call__(
        self, z: Tensor, participant_rows: IndexArray, portion_rows: IndexArray
    ) -> Tensor:
        """Map latent rows to feature rows for the given condition rows."""
        h = concat_cols(
            [
                z,
                gather_rows(self.participant_embedding, participant_rows),
                gather_rows(self.portion_embedding, portion_rows),
            ]
        )
        mid = (self.clip.hi + self.clip.lo) / 2.0
        half = (self.clip.hi - self.clip.lo) / 2.0
        return add_const(scale(tanh(self.trunk(h)), half), mid)

    def parameters(self) -> list[Tensor]:
        """Embeddings first, then the trunk in layer order."""
        return [
            self.participant_embedding,
            self.portion_embedding,
            *self.trunk.parameters(),
        ]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """``(name, tensor)`` pairs in :meth:`parameters` order."""
        return [(p.name, p) for p in self.parameters()]

    def architecture(self) -> dict[str, Any]:
        """JSON-ready description used in checkpoint headers."""
        return {
            "config": self.config.model_dump(mode="json"),
            "participants": self.conditions.participants,
            "dimension": self.dimension,
            "clip": [self.clip.lo, self.clip.hi],
        }


class CriticModel:
    """Packed conditional critic ``(pack of m samples, condition) -> score``."""

    def __init__(
        self,
        config: CriticConfig,
        participants: Sequence[str],
        dimension: int,
        participant_embedding_dim: int = 8,
        portion_embedding_dim: int = 8,
        rng: np.random.Generator | None = None,
    ):
        """Initialize embeddings and trunk."""
        rng = rng or np.random.default_rng(0)
        self.config = config
        self.dimension = dimension
        self.pack_size = config.pack_size
        self.conditions = ConditionIndex(participants)
        self.participant_embedding = _embedding(
            rng, len(self.conditions.participants),
            participant_embedding_dim, "critic.participant_embedding",
        )
        self.portion_embedding = _embedding(
            rng, len(TaskPortion), portion_embedding_dim, "critic.portion_embedding"
        )
        self.trunk = Mlp(
            critic_spec(
                config, dimension, participant_embedding_dim, portion_embedding_dim
            ),
            rng,
            name="critic.trunk",
        )

    def score(
        self, packed: Tensor, participant_rows: IndexArray, portion_rows: IndexArray
    ) -> Tensor:
        """Critic value of each pack as a ``packs x 1`` tensor."""
        h = concat_cols(
            [
                packed,
                gather_rows(self.participant_embedding, participant_rows),
                gather_rows(self.portion_embedding, portion_rows),
            ]
        )
        return self.trunk(h)

    def parameters(self) -> list[Tensor]:
        """Embeddings first, then the trunk in layer order."""
        return [
            self.participant_embedding,
            self.portion_embedding,
            *self.trunk.parameters(),
        ]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """``(name, tensor)`` pairs in :meth:`parameters` order."""
        return [(p.name, p) for p in self.parameters()]


def save_checkpoint(
    path: Path | str,
    generator: GeneratorModel,
    config_echo: dict[str, Any] | None = None,
) -> None:
    """Write generator parameters in the flat binary checkpoint format."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    named = generator.named_parameters()
    header = {
        "kind": "generator",
        "architecture": generator.architecture(),
        "parameters": [[name, list(t.shape)] for name, t in named],
        "config": config_echo or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(t.value.astype("<f8").tobytes(order="C") for _, t in named)
    with file_path.open("wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        handle.write(header_bytes)
        handle.write(payload)
    logger.debug(f"Wrote checkpoint {file_path} ({len(payload)} parameter bytes)")


def read_checkpoint(path: Path | str) -> tuple[dict[str, Any], dict[str, FloatArray]]:
    """Read a checkpoint header and its named parameter arrays.

    Raises:
        CheckpointFormatError: On a bad magic, version or size
    """
    data = Path(path).read_bytes()
    prefix = len(CHECKPOINT_MAGIC) + 8
    if len(data) < prefix or data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint")
    version, header_length = struct.unpack("<II", data[len(CHECKPOINT_MAGIC) : prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}")
    try:
        header = json.loads(data[prefix : prefix + header_length].decode("utf-8"))
        payload = np.frombuffer(data[prefix + header_length :], dtype="<f8")
    except ValueError as e:
        raise CheckpointFormatError(
            f"{path} has a corrupt header or payload: {e}"
        ) from e

    arrays: dict[str, FloatArray] = {}
    offset = 0
    for name, shape in header["parameters"]:
        size = int(np.prod(shape))
        if offset + size > payload.size:
            raise CheckpointFormatError(f"{path} is truncated at parameter {name}")
        arrays[name] = payload[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != payload.size:
        raise CheckpointFormatError(
            f"{path} has {payload.size - offset} trailing values"
        )
    return header, arrays


def load_generator(path: Path | str) -> GeneratorModel:
    """Rebuild a generator from a checkpoint.

    Raises:
        CheckpointFormatError: If the file is not a generator checkpoint
    """
    header, arrays = read_checkpoint(path)
    if header.get("kind") != "generator":
        raise CheckpointFormatError(f"{path} does not hold a generator")
    architecture = header["architecture"]
    model = GeneratorModel(
        GeneratorConfig.model_validate(architecture["config"]),
        architecture["participants"],
        int(architecture["dimension"]),
        ClipRange(lo=architecture["clip"][0], hi=architecture["clip"][1]),
    )
    for name, tensor in model.named_parameters():
        if name not in arrays or arrays[name].shape != tensor.shape:
            raise CheckpointFormatError(
                f"Parameter {name} missing or misshaped in {path}"
            )
        tensor.value = arrays[name]
    logger.info(f"Loaded generator from {path}")
    return model


__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "UnknownConditionError",
    "CheckpointFormatError",
    "ConditionIndex",
    "generator_spec",
    "critic_spec",
    "GeneratorModel",
    "CriticModel",
    "save_checkpoint",
    "read_checkpoint",
    "load_generator",
]
