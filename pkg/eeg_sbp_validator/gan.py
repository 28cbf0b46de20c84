"""Conditional packed-critic WGAN-GP with condition-wise variance matching.

The critic sees packs of ``m`` samples drawn from a single
(participant, portion) group, concatenated and followed by the group's
condition embeddings. Its loss is the Wasserstein estimate plus a gradient
penalty on interpolates between real and generated packs. The generator
minimizes the negated critic score plus a penalty on per-feature variance
differences inside each condition group of the batch.
"""

from collections.abc import Hashable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from loguru import logger

from .autodiff import (
    IndexArray,
    Tensor,
    add,
    add_const,
    broadcast_rows,
    gather_rows,
    grad,
    gradient_penalty,
    mean,
    no_grad,
    reshape,
    scale,
    square,
    sub,
    sum_rows,
)
from .dataset import EmptyGroupError
from .exceptions import ComputationFailure, ValidationFailure
from .models import (
    ClipRange,
    CriticConfig,
    Dataset,
    FloatArray,
    GeneratorConfig,
    Sample,
    SampleSpace,
    TaskPortion,
    TrainConfig,
    TrainingLog,
    TrainingRecord,
)
from .networks import (
    ConditionIndex,
    CriticModel,
    GeneratorModel,
    UnknownConditionError,
    save_checkpoint,
)
from .utils import derive_seed

Condition = tuple[str, TaskPortion]


class MixedConditionPackError(ValidationFailure):
    """Samples of one pack come from different condition groups."""


class NoEligibleGroupsError(ComputationFailure):
    """No condition group has two real and two generated samples."""


class DivergenceDetectedError(ComputationFailure):
    """A training loss became non-finite."""


@dataclass(frozen=True)
class Pack:
    """``m`` same-condition samples concatenated into one critic input."""

    features: FloatArray
    participant_id: str
    portion: TaskPortion
    count: int = 1

    @property
    def size(self) -> int:
        """Length of the concatenated feature block."""
        return int(self.features.shape[0])


def pack(samples: Sequence[Sample]) -> Pack:
    """Concatenate same-condition samples in the given order.

    Raises:
        ValueError: If ``samples`` is empty
        MixedConditionPackError: If the samples do not share one condition
    """
    if not samples:
        raise ValueError("A pack needs at least one sample")
    first = samples[0]
    for sample in samples[1:]:
        if (sample.participant_id, sample.task_portion) != (
            first.participant_id,
            first.task_portion,
        ):
            raise MixedConditionPackError(
                f"Pack mixes ({first.participant_id}, {first.task_portion.value}) with "
                f"({sample.participant_id}, {sample.task_portion.value})"
            )
    features = np.concatenate(
        [np.asarray(s.features, dtype=np.float64) for s in samples]
    )
    return Pack(
        features=features,
        participant_id=first.participant_id,
        portion=first.task_portion,
        count=len(samples),
    )


@dataclass(frozen=True)
class PackBatch:
    """A batch of packs with their condition rows.

    Attributes:
        features: ``packs x (m * d)`` concatenated feature blocks
        participant_rows: Participant embedding row per pack
        portion_rows: Portion embedding row per pack
        pack_size: Samples per pack ``m``
    """

    features: FloatArray
    participant_rows: IndexArray
    portion_rows: IndexArray
    pack_size: int

    @classmethod
    def from_packs(
        cls, packs: Sequence[Pack], conditions: ConditionIndex
    ) -> "PackBatch":
        """Stack packs of equal size."""
        sizes = {(p.size, p.count) for p in packs}
        if len(sizes) != 1:
            raise MixedConditionPackError("Packs in one batch must have equal size")
        return cls(
            features=np.vstack([p.features for p in packs]),
            participant_rows=conditions.participant_rows(
                [p.participant_id for p in packs]
            ),
            portion_rows=conditions.portion_rows([p.portion for p in packs]),
            pack_size=packs[0].count,
        )

    @property
    def packs(self) -> int:
        """Number of packs."""
        return int(self.features.shape[0])

    def samples(self) -> FloatArray:
        """The individual samples as ``(packs * m) x d`` rows."""
        return self.features.reshape(self.packs * self.pack_size, -1)

    def sample_groups(self) -> list[tuple[int, int]]:
        """Condition of every individual sample, pack by pack."""
        return [
            (int(p), int(t))
            for p, t in zip(self.participant_rows, self.portion_rows, strict=True)
            for _ in range(self.pack_size)
        ]


def critic_input(batch: PackBatch, critic: CriticModel) -> FloatArray:
    """Numeric critic input rows: pack features followed by embeddings."""
    return np.hstack(
        [
            batch.features,
            critic.participant_embedding.value[batch.participant_rows],
            critic.portion_embedding.value[batch.portion_rows],
        ]
    )


@dataclass(frozen=True)
class LossResult:
    """A loss value, its components and parameter gradients."""

    loss: float
    gradients: list[FloatArray]
    wasserstein: float | None = None
    grad_penalty: float | None = None
    adversarial: float | None = None
    l_var: float | None = None


def critic_loss(
    critic: CriticModel,
    real: PackBatch,
    generated: PackBatch,
    interpolates: FloatArray,
    lambda_gp: float,
) -> LossResult:
    """``E[D(generated)] - E[D(real)] + lambda_gp * E[(||grad D(x_hat)|| - 1)^2]``.

    The penalty differentiates the critic with respect to the packed feature
    block only; interpolates carry the real batch's conditions.

    Returns:
        Loss, Wasserstein estimate ``E[D(real)] - E[D(generated)]``, penalty
        and gradients for ``critic.parameters()``
    """

    def score_real_conditions(x: Tensor) -> Tensor:
        return critic.score(x, real.participant_rows, real.portion_rows)

    score_real = mean(score_real_conditions(Tensor(real.features)))
    score_fake = mean(
        critic.score(
            Tensor(generated.features),
            generated.participant_rows,
            generated.portion_rows,
        )
    )
    penalty = gradient_penalty(score_real_conditions, interpolates)
    loss = add(sub(score_fake, score_real), scale(penalty, lambda_gp))
    gradients = grad(loss, critic.parameters())
    return LossResult(
        loss=loss.item(),
        gradients=[g.value for g in gradients],
        wasserstein=score_real.item() - score_fake.item(),
        grad_penalty=penalty.item(),
    )


def _population_variance(rows: Tensor) -> Tensor:
    count = rows.shape[0]
    centered = sub(rows, broadcast_rows(scale(sum_rows(rows), 1.0 / count), count))
    return scale(sum_rows(square(centered)), 1.0 / count)


def variance_loss(
    real: FloatArray,
    real_groups: Sequence[Hashable],
    generated: Tensor | FloatArray,
    generated_groups: Sequence[Hashable],
) -> Tensor:
    """Mean over eligible groups of the mean squared per-feature variance gap.

    Variances use the population convention. A group is eligible when it has
    at least two real and two generated samples.

    Returns:
        ``1 x 1`` tensor, differentiable through ``generated``

    Raises:
        NoEligibleGroupsError: If no group is eligible
    """
    gen = generated if isinstance(generated, Tensor) else Tensor(generated)
    real = np.asarray(real, dtype=np.float64)
    real_index: dict[Hashable, list[int]] = {}
    for k, key in enumerate(real_groups):
        real_index.setdefault(key, []).append(k)
    gen_index: dict[Hashable, list[int]] = {}
    for k, key in enumerate(generated_groups):
        gen_index.setdefault(key, []).append(k)

    terms: list[Tensor] = []
    for key, rows in real_index.items():
        gen_rows = gen_index.get(key, [])
        if len(rows) < 2 or len(gen_rows) < 2:
            continue
        var_real = real[rows].var(axis=0, ddof=0).reshape(1, -1)
        gen_positions = np.array(gen_rows, dtype=np.intp)
        var_gen = _population_variance(gather_rows(gen, gen_positions))
        terms.append(mean(square(add_const(scale(var_gen, -1.0), var_real))))

    if not terms:
        raise NoEligibleGroupsError(
            "No condition group has >= 2 real and >= 2 generated samples"
        )
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return scale(total, 1.0 / len(terms))


def generator_loss(
    generator: GeneratorModel,
    critic: CriticModel,
    z: FloatArray,
    real: PackBatch,
    lambda_var: float,
) -> LossResult:
    """``-E[D(G(z))] + lambda_var * L_var`` for packs matched to ``real``.

    Sample ``k`` of ``z`` is generated under the condition of pack
    ``k // m``. Only generator gradients are returned; the critic is read,
    never updated.
    """
    m = real.pack_size
    sample_participants = np.repeat(real.participant_rows, m)
    sample_portions = np.repeat(real.portion_rows, m)
    samples = generator(Tensor(z), sample_participants, sample_portions)
    packed = reshape(samples, real.packs, m * generator.dimension)
    scores = critic.score(packed, real.participant_rows, real.portion_rows)
    adversarial = scale(mean(scores), -1.0)

    loss = adversarial
    l_var_value = 0.0
    if lambda_var > 0:
        groups = real.sample_groups()
        try:
            l_var = variance_loss(real.samples(), groups, samples, groups)
            l_var_value = l_var.item()
            loss = add(adversarial, scale(l_var, lambda_var))
        except NoEligibleGroupsError:
            logger.warning("No eligible variance groups in batch; L_var = 0")

    gradients = grad(loss, generator.parameters())
    return LossResult(
        loss=loss.item(),
        gradients=[g.value for g in gradients],
        adversarial=adversarial.item(),
        l_var=l_var_value,
    )


class Adam:
    """Adaptive-moment optimizer over a fixed list of tensors."""

    def __init__(
        self,
        parameters: Sequence[Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.5, 0.9),
        eps: float = 1e-8,
    ):
        """Initialize zero moments for each parameter."""
        self.parameters = list(parameters)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.parameters]
        self._v = [np.zeros_like(p.value) for p in self.parameters]

    def step(self, gradients: Sequence[FloatArray]) -> None:
        """Apply one bias-corrected update."""
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        pairs = zip(self.parameters, gradients, strict=True)
        for k, (param, gradient) in enumerate(pairs):
            self._m[k] = self.beta1 * self._m[k] + (1.0 - self.beta1) * gradient
            self._v[k] = self.beta2 * self._v[k] + (1.0 - self.beta2) * gradient**2
            m_hat = self._m[k] / correction1
            v_hat = self._v[k] / correction2
            param.value = param.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Trainer:
    """Alternating critic/generator updates on a normalized dataset.

    All randomness comes from streams derived from ``TrainConfig.seed``, so
    two trainers with the same inputs produce identical logs and parameters.
    """

    def __init__(
        self,
        dataset: Dataset,
        generator_config: GeneratorConfig | None = None,
        critic_config: CriticConfig | None = None,
        train_config: TrainConfig | None = None,
        clip: ClipRange | None = None,
        checkpoint_dir: Path | None = None,
    ):
        """Validate the dataset and initialize both networks.

        Raises:
            ValidationFailure: If the dataset is not normalized
            EmptyGroupError: If a participant lacks a portion present elsewhere
        """
        if dataset.space != SampleSpace.NORMALIZED:
            raise ValidationFailure("GAN training expects a normalized dataset")
        self.dataset = dataset
        self.generator_config = generator_config or GeneratorConfig()
        self.critic_config = critic_config or CriticConfig()
        self.config = train_config or TrainConfig()
        self.checkpoint_dir = checkpoint_dir

        participants = dataset.participants()
        self.groups: list[Condition] = []
        self._group_rows: list[FloatArray] = []
        for participant in participants:
            for portion in dataset.portions_present():
                rows = np.flatnonzero(dataset.row_mask(participant, portion))
                if rows.size == 0:
                    raise EmptyGroupError(
                        f"Participant '{participant}' has no {portion.value} samples"
                    )
                self.groups.append((participant, portion))
                self._group_rows.append(rows)

        seed = self.config.seed
        self.generator = GeneratorModel(
            self.generator_config,
            participants,
            dataset.dimension,
            clip,
            np.random.default_rng(derive_seed(seed, "generator_init")),
        )
        self.critic = CriticModel(
            self.critic_config,
            participants,
            dataset.dimension,
            self.generator_config.participant_embedding_dim,
            self.generator_config.portion_embedding_dim,
            np.random.default_rng(derive_seed(seed, "critic_init")),
        )
        self.rng = np.random.default_rng(derive_seed(seed, "batches"))
        self.generator_optimizer = Adam(
            self.generator.parameters(),
            self.config.generator_lr,
            (self.config.beta1, self.config.beta2),
            self.config.adam_eps,
        )
        self.critic_optimizer = Adam(
            self.critic.parameters(),
            self.config.critic_lr,
            (self.config.beta1, self.config.beta2),
            self.config.adam_eps,
        )
        self.log = TrainingLog()

    def sample_real(self) -> PackBatch:
        """Draw packs: a group per pack, then ``m`` rows with replacement."""
        m = self.critic_config.pack_size
        chosen = self.rng.integers(0, len(self.groups), size=self.config.batch_size)
        features = np.empty((self.config.batch_size, m * self.dataset.dimension))
        for k, g in enumerate(chosen):
            rows = self.rng.choice(self._group_rows[g], size=m, replace=True)
            features[k] = self.dataset.features[rows].reshape(-1)
        conditions = self.generator.conditions
        return PackBatch(
            features=features,
            participant_rows=conditions.participant_rows(
                [self.groups[g][0] for g in chosen]
            ),
            portion_rows=conditions.portion_rows([self.groups[g][1] for g in chosen]),
            pack_size=m,
        )

    def _latent(self, real: PackBatch) -> FloatArray:
        rows = real.packs * real.pack_size
        return self.rng.standard_normal((rows, self.generator_config.latent_dim))

    def _generate_packs(self, real: PackBatch, z: FloatArray) -> PackBatch:
        m = real.pack_size
        with no_grad():
            samples = self.generator(
                Tensor(z),
                np.repeat(real.participant_rows, m),
                np.repeat(real.portion_rows, m),
            )
        return PackBatch(
            features=samples.value.reshape(real.packs, m * self.dataset.dimension),
            participant_rows=real.participant_rows,
            portion_rows=real.portion_rows,
            pack_size=m,
        )

    def critic_step(self, step: int) -> TrainingRecord:
        """One critic update.

        Raises:
            DivergenceDetectedError: If the loss is not finite
        """
        real = self.sample_real()
        generated = self._generate_packs(real, self._latent(real))
        t = self.rng.uniform(0.0, 1.0, size=(real.packs, 1))
        interpolates = t * real.features + (1.0 - t) * generated.features
        result = critic_loss(
            self.critic, real, generated, interpolates, self.config.lambda_gp
        )
        if not np.isfinite(result.loss):
            raise DivergenceDetectedError(
                f"Critic loss {result.loss} at critic step {step} "
                f"(wasserstein={result.wasserstein}, penalty={result.grad_penalty})"
            )
        self.critic_optimizer.step(result.gradients)
        return TrainingRecord(
            step=step,
            kind="critic",
            wasserstein=result.wasserstein,
            grad_penalty=result.grad_penalty,
        )

    def generator_step(self, step: int) -> TrainingRecord:
        """One generator update.

        Raises:
            DivergenceDetectedError: If the loss is not finite
        """
        real = self.sample_real()
        result = generator_loss(
            self.generator,
            self.critic,
            self._latent(real),
            real,
            self.config.lambda_var,
        )
        if not np.isfinite(result.loss):
            raise DivergenceDetectedError(
                f"Generator loss {result.loss} at generator step {step} "
                f"(adversarial={result.adversarial}, l_var={result.l_var})"
            )
        self.generator_optimizer.step(result.gradients)
        return TrainingRecord(
            step=step,
            kind="generator",
            adversarial=result.adversarial,
            l_var=result.l_var,
        )

    def checkpoint(self, name: str) -> Path | None:
        """Write the generator to ``checkpoint_dir / name`` if a directory is set."""
        if self.checkpoint_dir is None:
            return None
        path = self.checkpoint_dir / name
        save_checkpoint(path, self.generator, self.config_echo())
        return path

    def config_echo(self) -> dict[str, Any]:
        """Configuration recorded in checkpoint headers."""
        return {
            "generator": self.generator_config.model_dump(mode="json"),
            "critic": self.critic_config.model_dump(mode="json"),
            "train": self.config.model_dump(mode="json"),
        }

    def run(self) -> tuple[GeneratorModel, TrainingLog]:
        """Run ``generator_steps`` rounds of ``critic_steps`` critic updates
        followed by one generator update."""
        steps = self.config.generator_steps
        logger.info(
            f"Training WGAN-GP: {steps} generator steps, "
            f"{self.config.critic_steps} critic steps each, "
            f"{len(self.groups)} condition groups, seed={self.config.seed}"
        )
        critic_step = 0
        for gen_step in range(steps):
            for _ in range(self.config.critic_steps):
                self.log.append(self.critic_step(critic_step))
                critic_step += 1
            record = self.generator_step(gen_step)
            self.log.append(record)
            every = self.config.checkpoint_every
            if every and (gen_step + 1) % every == 0:
                self.checkpoint(f"generator_step{gen_step + 1:06d}.ckpt")
            if gen_step % 100 == 0:
                last = self.log.critic_records()[-1]
                logger.debug(
                    f"step {gen_step}: wasserstein={last.wasserstein:.4f} "
                    f"gp={last.grad_penalty:.4f} l_var={record.l_var:.4f}"
                )
        self.checkpoint("generator.ckpt")
        logger.info(f"Training finished after {critic_step} critic updates")
        return self.generator, self.log


def train(
    dataset: Dataset,
    generator_config: GeneratorConfig | None = None,
    critic_config: CriticConfig | None = None,
    train_config: TrainConfig | None = None,
    clip: ClipRange | None = None,
    checkpoint_dir: Path | None = None,
) -> tuple[GeneratorModel, TrainingLog]:
    """Train a conditional generator on a normalized dataset.

    Raises:
        DivergenceDetectedError: If a loss becomes non-finite
    """
    trainer = Trainer(
        dataset, generator_config, critic_config, train_config, clip, checkpoint_dir
    )
    return trainer.run()


def generate(
    model: GeneratorModel, participant: str, portion: TaskPortion, n: int, seed: int
) -> FloatArray:
    """Draw ``n`` normalized feature vectors for one condition.

    Raises:
        UnknownConditionError: If the participant was not in training
    """
    rows = model.conditions.participant_rows([participant])
    portion_rows = model.conditions.portion_rows([portion])
    if n == 0:
        return np.empty((0, model.dimension))
    z = np.random.default_rng(seed).standard_normal((n, model.config.latent_dim))
    with no_grad():
        output = model(Tensor(z), np.repeat(rows, n), np.repeat(portion_rows, n))
    return output.value


def synthesize_dataset(model: GeneratorModel, like: Dataset, seed: int) -> Dataset:
    """Synthetic dataset with the same group sizes as ``like``.

    Each (participant, portion) group gets its own seed derived from ``seed``.

    Raises:
        UnknownConditionError: If ``like`` has a participant the model lacks
    """
    participant_ids: list[str] = []
    portions: list[TaskPortion] = []
    blocks: list[FloatArray] = []
    for participant in like.participants():
        for portion in like.portions_present():
            count = int(like.row_mask(participant, portion).sum())
            if count == 0:
                continue
            blocks.append(
                generate(
                    model, participant, portion, count,
                    derive_seed(seed, f"{participant}/{portion.value}"),
                )
            )
            participant_ids.extend([participant] * count)
            portions.extend([portion] * count)
    logger.info(f"Synthesized {len(participant_ids)} samples in {len(blocks)} groups")
    return Dataset(
        feature_schema=like.feature_schema,
        participant_ids=tuple(participant_ids),
        portions=tuple(portions),
        features=np.vstack(blocks) if blocks else np.empty((0, like.dimension)),
        space=SampleSpace.NORMALIZED,
    )


def write_training_log(log: TrainingLog, path: Path | str) -> None:
    """Write ``step,kind,wasserstein,grad_penalty,l_var,adversarial`` CSV."""
    columns = ["step", "kind", "wasserstein", "grad_penalty", "l_var", "adversarial"]
    frame = pd.DataFrame([r.model_dump() for r in log.records], columns=columns)
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(file_path, index=False)


def read_training_log(path: Path | str) -> TrainingLog:
    """Read a log written by :func:`write_training_log`."""
    frame = pd.read_csv(Path(path), float_precision="round_trip")
    metrics = ("wasserstein", "grad_penalty", "l_var", "adversarial")
    records = [
        TrainingRecord(
            step=int(row["step"]),
            kind=str(row["kind"]),  # type: ignore[arg-type]
            **{k: None if pd.isna(row[k]) else float(row[k]) for k in metrics},
        )
        for row in frame.to_dict(orient="records")
    ]
    return TrainingLog(records=records)


__all__ = [
    "MixedConditionPackError",
    "NoEligibleGroupsError",
    "DivergenceDetectedError",
    "UnknownConditionError",
    "Pack",
    "pack",
    "PackBatch",
    "critic_input",
    "LossResult",
    "critic_loss",
    "variance_loss",
    "generator_loss",
    "Adam",
    "Trainer",
    "train",
    "generate",
    "synthesize_dataset",
    "write_training_log",
    "read_training_log",
]
