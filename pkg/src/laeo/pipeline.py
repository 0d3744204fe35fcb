"""Two-stage training: pretrain the head-pose branch on pose-labeled
sequences, then train the pair classifier with those weights frozen.

Stage two mixes real and synthetic pools (first epochs synthetic-only, then
alternating per step), audits every batch as 4 positive + 4 negative +
1 hard negative, mines hard negatives against a read-only model snapshot
under a rising difficulty cap, and drops the learning rate on validation-AP
plateaus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch.optim.lr_scheduler import ReduceLROnPlateau

from .core import LABEL_LAEO, TrackPairSample, normalize_crop
from .evaluation import ranked_ap
from .losses import head_pose_loss, laeo_loss
from .model import (
    LaeoNet,
    LaeoNetConfig,
    PoseRegressor,
    batch_probabilities,
    crops_to_tensor,
    freeze_groups,
    sample_to_tensors,
    snapshot_parameters,
)

BATCH_POSITIVES = 4
BATCH_NEGATIVES = 4
BATCH_HARD = 1
BATCH_SIZE = BATCH_POSITIVES + BATCH_NEGATIVES + BATCH_HARD


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; training aborted with diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and batch-composition settings.

    The learning rate starts at lr_init and is multiplied by lr_factor
    (floored at lr_min) whenever validation AP fails to improve for
    lr_patience consecutive validation checks (one check per epoch).
    """

    lr_init: float = 1e-4
    lr_factor: float = 0.2
    lr_patience: int = 5
    lr_min: float = 1e-8
    epochs: int = 10
    steps_per_epoch: int | None = None
    synthetic_only_epochs: int = 2
    curriculum_start: float = 0.5
    curriculum_step: float = 0.1
    curriculum_step_epochs: int = 2
    curriculum_max: float = 1.0
    freeze_head_pose: bool = True
    seed: int = 0
    pose_batch_size: int = 16
    target_train_accuracy: float | None = None
    refine_epochs: int = 0

    def __post_init__(self):
        if self.lr_min > self.lr_init:
            raise ValueError("lr_min must not exceed lr_init")
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.synthetic_only_epochs < 0 or self.curriculum_step_epochs < 1:
            raise ValueError("bad epoch schedule")


def curriculum_difficulty(epoch: int, config: TrainConfig) -> float:
    """Difficulty cap for hard negatives: starts at curriculum_start and
    rises by curriculum_step every curriculum_step_epochs, up to the max."""
    bumps = epoch // config.curriculum_step_epochs
    return min(config.curriculum_max, config.curriculum_start + config.curriculum_step * bumps)


@dataclass
class SamplePool:
    """Labeled samples split by class."""

    positives: list[TrackPairSample] = field(default_factory=list)
    negatives: list[TrackPairSample] = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples: Iterable[TrackPairSample]) -> "SamplePool":
        pool = cls()
        for s in samples:
            if s.label == LABEL_LAEO:
                pool.positives.append(s)
            else:
                pool.negatives.append(s)
        return pool

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)


def filter_hard_negatives(
    scored_negatives: Sequence[tuple[TrackPairSample, float]], difficulty: float
) -> list[TrackPairSample]:
    """Admit negatives the model scores at least 1 - difficulty; a larger
    difficulty admits strictly more of the pool."""
    threshold = 1.0 - difficulty
    return [sample for sample, score in scored_negatives if score >= threshold]


def mine_hard_negatives(
    model: LaeoNet, negatives: Sequence[TrackPairSample], difficulty: float
) -> list[TrackPairSample]:
    """Score the negative pool with a read-only snapshot of the model and
    keep the confidently-misclassified ones."""
    if not negatives:
        return []
    scores = batch_probabilities(model, negatives)
    return filter_hard_negatives(list(zip(negatives, scores)), difficulty)


@dataclass(frozen=True)
class BatchAudit:
    """What compose_batch actually did, for the batch auditor in tests."""

    epoch: int
    step: int
    phase: str  # "synthetic_only", "real" or "synthetic"
    num_positives: int
    num_negatives: int
    num_hard: int
    hard_source: str  # "mined" or "substituted_negative"
    labels: tuple[int, ...]


def _draw(pool: Sequence, count: int, rng: np.random.Generator) -> list:
    if not pool:
        raise ValueError("cannot draw from an empty pool")
    idx = rng.choice(len(pool), size=count, replace=len(pool) < count)
    return [pool[int(i)] for i in idx]


def compose_batch(
    real_pool: SamplePool | None,
    synth_pool: SamplePool,
    hard_pool: Sequence[TrackPairSample],
    epoch: int,
    step: int,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[list[TrackPairSample], BatchAudit]:
    """Assemble one 4+4+1 batch.

    The first synthetic_only_epochs epochs draw everything from the
    synthetic pool; afterwards odd steps draw the 4+4 from the real pool and
    even steps from the synthetic pool. The hard slot draws from the mined
    hard pool, falling back to an ordinary negative of the active pool when
    no hard negatives qualify yet.
    """
    if epoch < config.synthetic_only_epochs:
        pool, phase = synth_pool, "synthetic_only"
    elif step % 2 == 1 and real_pool is not None and len(real_pool) > 0:
        pool, phase = real_pool, "real"
    else:
        pool, phase = synth_pool, "synthetic"

    positives = _draw(pool.positives, BATCH_POSITIVES, rng)
    negatives = _draw(pool.negatives, BATCH_NEGATIVES, rng)
    if len(hard_pool) > 0:
        hard = _draw(hard_pool, BATCH_HARD, rng)
        hard_source = "mined"
    else:
        hard = _draw(pool.negatives, BATCH_HARD, rng)
        hard_source = "substituted_negative"

    samples = positives + negatives + hard
    audit = BatchAudit(
        epoch=epoch,
        step=step,
        phase=phase,
        num_positives=len(positives),
        num_negatives=len(negatives),
        num_hard=len(hard),
        hard_source=hard_source,
        labels=tuple(s.label for s in samples),
    )
    return samples, audit


@dataclass(frozen=True)
class LogRow:
    """One training-log line; step is None for epoch-summary rows."""

    epoch: int
    step: int | None
    loss: float | None
    val_ap: float | None
    lr: float
    train_accuracy: float | None = None


def _current_lr(optimizer: torch.optim.Optimizer) -> float:
    return float(optimizer.param_groups[0]["lr"])


def pretrain_head_pose(
    dataset: Sequence[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig = TrainConfig(),
    model_config: LaeoNetConfig = LaeoNetConfig(),
    steps: int | None = None,
) -> tuple[PoseRegressor, list[LogRow]]:
    """Stage one: fit the head-pose branch plus its angle readout.

    dataset entries are (crops, target) with crops (K, 64, 64, 3) uint8 or
    already-normalized float, and target the three normalized angles.
    Runs config.epochs passes (or exactly `steps` optimizer steps if given)
    of Adam at lr_init. Returns the regressor, whose head_pose parameters
    seed stage two.
    """
    if not dataset:
        raise ValueError("pose pretraining needs a nonempty dataset")
    torch.manual_seed(config.seed)
    model = PoseRegressor(model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_init)

    def to_inputs(batch):
        crops = np.stack([normalize_crop(c) if c.dtype == np.uint8 else c for c, _ in batch])
        targets = np.stack([t for _, t in batch])
        return crops_to_tensor(crops), torch.as_tensor(targets, dtype=torch.float32)

    rng = np.random.default_rng(config.seed)
    log: list[LogRow] = []
    total_steps = 0
    epoch = 0
    steps_per_epoch = max(1, math.ceil(len(dataset) / config.pose_batch_size))
    while True:
        model.train()
        epoch_losses = []
        for step in range(steps_per_epoch):
            batch = _draw(dataset, min(config.pose_batch_size, len(dataset)), rng)
            crops, targets = to_inputs(batch)
            optimizer.zero_grad()
            pred = model(crops)
            loss = head_pose_loss(pred, targets).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite pose loss at epoch {epoch} step {step}: {loss.item()}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.item()))
            log.append(LogRow(epoch, step, float(loss.item()), None, _current_lr(optimizer)))
            total_steps += 1
            if steps is not None and total_steps >= steps:
                break
        # Validation loss on the training set itself (no separate split at
        # this stage), logged once per epoch.
        model.eval()
        with torch.no_grad():
            crops, targets = to_inputs(list(dataset))
            val_loss = float(head_pose_loss(model(crops), targets).mean().item())
        log.append(LogRow(epoch, None, val_loss, None, _current_lr(optimizer)))
        epoch += 1
        if steps is not None:
            if total_steps >= steps:
                break
        elif epoch >= config.epochs:
            break
    return model, log


def _transfer_head_pose(model: LaeoNet, pretrained: PoseRegressor | dict) -> None:
    if isinstance(pretrained, PoseRegressor):
        state = pretrained.head_pose.state_dict()
    else:
        state = {
            k.removeprefix("head_pose."): v
            for k, v in pretrained.items()
            if k.startswith("head_pose.")
        }
    model.head_pose.load_state_dict(state)
    if model.head_pose_right is not None:
        model.head_pose_right.load_state_dict(state)


def _check_frozen(model: LaeoNet, reference: dict[str, np.ndarray]) -> None:
    current = snapshot_parameters(model, ["head_pose"])
    for name, value in reference.items():
        if not np.array_equal(current[name], value):
            raise AssertionError(f"frozen parameter {name} was mutated during training")


@dataclass
class TrainResult:
    model: LaeoNet
    log: list[LogRow]
    audits: list[BatchAudit]
    final_train_accuracy: float | None


def train_laeo(
    real_samples: Sequence[TrackPairSample] | None,
    synth_samples: Sequence[TrackPairSample],
    config: TrainConfig = TrainConfig(),
    model_config: LaeoNetConfig = LaeoNetConfig(),
    pretrained: PoseRegressor | dict | None = None,
    val_samples: Sequence[TrackPairSample] | None = None,
) -> TrainResult:
    """Stage two: train the pair classifier.

    Validation AP (on val_samples, else on the training pool) is checked
    once per epoch and drives the plateau learning-rate schedule. With
    freeze_head_pose the pretrained branch weights are required and stay
    bit-identical throughout. Stops early once target_train_accuracy is
    reached, if set.
    """
    synth_pool = SamplePool.from_samples(synth_samples)
    real_pool = SamplePool.from_samples(real_samples) if real_samples else None
    if not synth_pool.positives or not synth_pool.negatives:
        raise ValueError("synthetic pool must contain both classes")

    torch.manual_seed(config.seed)
    model = LaeoNet(model_config)
    if pretrained is not None:
        _transfer_head_pose(model, pretrained)
    if config.freeze_head_pose:
        if pretrained is None:
            raise ValueError("freeze_head_pose requires pretrained head-pose weights")
        freeze_groups(model, ["head_pose"])
    frozen_ref = snapshot_parameters(model, ["head_pose"]) if config.freeze_head_pose else None

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.lr_init)
    scheduler = ReduceLROnPlateau(
        optimizer,
        mode="max",
        factor=config.lr_factor,
        patience=config.lr_patience,
        threshold=0.0,
        min_lr=config.lr_min,
    )

    monitor = list(val_samples) if val_samples else list(synth_samples) + list(real_samples or [])
    monitor_labels = np.array([s.label for s in monitor])
    if not (monitor_labels == LABEL_LAEO).any():
        raise ValueError("monitoring set needs at least one positive sample")

    pool_size = len(synth_pool) + (len(real_pool) if real_pool else 0)
    steps_per_epoch = config.steps_per_epoch or max(1, math.ceil(pool_size / BATCH_SIZE))
    rng = np.random.default_rng(config.seed)
    log: list[LogRow] = []
    audits: list[BatchAudit] = []
    final_accuracy: float | None = None

    all_negatives = list(synth_pool.negatives) + (list(real_pool.negatives) if real_pool else [])

    def run_epoch(epoch: int) -> tuple[float, float]:
        if epoch < config.synthetic_only_epochs:
            hard_pool: list[TrackPairSample] = []
        else:
            hard_pool = mine_hard_negatives(
                model, all_negatives, curriculum_difficulty(epoch, config)
            )
        model.train()
        for step in range(steps_per_epoch):
            samples, audit = compose_batch(
                real_pool, synth_pool, hard_pool, epoch, step, config, rng
            )
            audits.append(audit)
            left, right, context = sample_to_tensors(samples, model_config)
            labels = torch.as_tensor([s.label for s in samples], dtype=torch.float32)
            optimizer.zero_grad()
            probs = model(left, right, context)
            loss = laeo_loss(labels, probs[:, 1]).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step}: {loss.item()}"
                )
            loss.backward()
            optimizer.step()
            log.append(LogRow(epoch, step, float(loss.item()), None, _current_lr(optimizer)))
        scores = batch_probabilities(model, monitor)
        val_ap = ranked_ap(
            scores, monitor_labels == LABEL_LAEO, int((monitor_labels == LABEL_LAEO).sum())
        ).ap
        accuracy = float(((scores >= 0.5).astype(int) == monitor_labels).mean())
        scheduler.step(val_ap)
        log.append(LogRow(epoch, None, None, val_ap, _current_lr(optimizer), accuracy))
        if frozen_ref is not None:
            _check_frozen(model, frozen_ref)
        return val_ap, accuracy

    for epoch in range(config.epochs):
        _, final_accuracy = run_epoch(epoch)
        if (
            config.target_train_accuracy is not None
            and final_accuracy >= config.target_train_accuracy
        ):
            break

    if config.refine_epochs > 0 and val_samples:
        # Fold the validation samples into the training pool for a short
        # refinement at the latest learning rate.
        refine_pool = SamplePool.from_samples(val_samples)
        synth_pool.positives.extend(refine_pool.positives)
        synth_pool.negatives.extend(refine_pool.negatives)
        all_negatives.extend(refine_pool.negatives)
        for extra in range(config.refine_epochs):
            _, final_accuracy = run_epoch(config.epochs + extra)

    return TrainResult(model=model, log=log, audits=audits, final_train_accuracy=final_accuracy)
