"""Cross-entropy training with Adam, plateau decay and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .models.base import Module
from .optim import Adam, TrainingError
from .rng import SeedStreams

logger = logging.getLogger(__name__)

IMPROVEMENT_THRESHOLD = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    max_epochs: int = 300
    patience: int = 30
    plateau_factor: float | None = None
    plateau_patience: int | None = None
    batch_size: int | None = None       # None trains full-batch
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ValueError(f"rates must be positive: {self}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError(f"need max_epochs >= 0 and patience >= 1: {self}")
        if self.plateau_patience is not None and (self.plateau_patience < 1 or not (self.plateau_factor or 0) > 1):
            raise ValueError(f"plateau schedule needs patience >= 1 and factor > 1: {self}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be positive: {self}")

    @classmethod
    def imaging(cls, **overrides) -> "TrainConfig":
        return replace(cls(learning_rate=5e-4, weight_decay=1e-5, max_epochs=300, patience=30), **overrides)

    @classmethod
    def clinical_baseline(cls, **overrides) -> "TrainConfig":
        return cls.imaging(**overrides)

    @classmethod
    def naim(cls, **overrides) -> "TrainConfig":
        base = cls(learning_rate=1e-3, weight_decay=0.0, max_epochs=1500, patience=100,
                   plateau_factor=10.0, plateau_patience=25)
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)


class PlateauScheduler:
    """Divide the learning rate by ``factor`` after ``patience`` stale epochs.

    An epoch is stale unless the validation loss beats the best so far by at
    least ``threshold``. The stale counter restarts after each decay.
    """

    def __init__(self, lr: float, factor: float = 10.0, patience: int = 25,
                 threshold: float = IMPROVEMENT_THRESHOLD):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.stale = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
        if self.stale >= self.patience:
            self.lr = self.lr / self.factor
            self.stale = 0
        return self.lr


def plateau_schedule(state: PlateauScheduler, val_loss: float) -> float:
    return state.step(val_loss)


@dataclass
class EarlyStopState:
    patience: int
    best_loss: float = math.inf
    best_epoch: int = -1
    best_state: dict | None = None
    since_best: int = 0

    def update(self, epoch: int, val_loss: float, model: Module) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_state = model.state_dict()
            self.since_best = 0
        else:
            self.since_best += 1
        return self.since_best >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class TrainResult:
    model: Module
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False
    aborted: str | None = None


def evaluate_loss(model: Module, inputs, labels) -> float:
    return T.cross_entropy_with_logits(model.logits(inputs, training=False), labels).item()


def _batches(n: int, size: int | None, rng: np.random.Generator) -> list[np.ndarray]:
    if size is None or size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train_model(model: Module, train_inputs, train_labels, val_inputs, val_labels,
                config: TrainConfig, streams: SeedStreams | None = None,
                val_loss_fn: Callable[[Module, int], float] | None = None) -> TrainResult:
    """Train ``model`` in place and leave it at its best-validation epoch.

    ``val_loss_fn(model, epoch)`` replaces the validation loss computation,
    which lets tests inject loss sequences. A non-finite loss or gradient ends
    training early with the last good checkpoint restored.
    """
    streams = streams or SeedStreams(config.seed)
    train_labels = np.asarray(train_labels)
    result = TrainResult(model)
    if config.max_epochs == 0:
        return result

    opt = Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    scheduler = None
    if config.plateau_patience is not None:
        scheduler = PlateauScheduler(config.learning_rate, config.plateau_factor, config.plateau_patience)
    early = EarlyStopState(config.patience, best_state=model.state_dict())
    n = len(train_labels)

    for epoch in range(config.max_epochs):
        lr_used = opt.lr
        total = 0.0
        try:
            for rows in _batches(n, config.batch_size, streams.shuffle):
                opt.zero_grad()
                loss = T.cross_entropy_with_logits(
                    model.logits(train_inputs[rows], training=True, rng=streams.dropout), train_labels[rows])
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}")
                T.backward(loss)
                opt.step()
                total += loss.item() * len(rows)
            val = val_loss_fn(model, epoch) if val_loss_fn else evaluate_loss(model, val_inputs, val_labels)
            if not np.isfinite(val):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        except TrainingError as exc:
            logger.error("training aborted: %s", exc)
            result.aborted = str(exc)
            break
        result.log.append(EpochRecord(epoch, total / n, float(val), lr_used))
        stop = early.update(epoch, float(val), model)
        if scheduler is not None:
            opt.lr = scheduler.step(float(val))
        if stop:
            result.stopped_early = True
            break

    model.load_state_dict(early.best_state)
    result.best_epoch = early.best_epoch
    result.best_val_loss = early.best_loss
    return result


def write_log(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "learning_rate"])
        for r in records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.learning_rate)])
