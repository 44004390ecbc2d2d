"""Mini-batch ADAM training with early stopping on the validation loss."""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from . import losses
from .data import one_hot, stack_patches
from .formats import save_weights
from .model import EddyNetConfig, backward, build_model, flat_params, flatten_grads, forward, predict_proba
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

MIN_DELTA = 1e-6
HISTORY_HEADER = "epoch,train_loss,val_loss,val_mean_dice,seconds"


@dataclass
class TrainConfig:
    loss: str = "dice"
    variant: str = "relu_bn"
    batch_size: int = 16
    patience: int = 5
    max_epochs: int = 200
    learning_rate: float = 1e-3
    dropout_rate: float = 0.2
    seed: int = 0
    record_time: bool = True
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.loss not in losses.LOSSES:
            raise ValueError(f"loss must be one of {sorted(losses.LOSSES)}, got {self.loss!r}")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be at least 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_mean_dice: float
    seconds: float


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.epochs)

    def to_csv(self):
        lines = [HISTORY_HEADER]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.val_mean_dice!r},{e.seconds:.3f}")
        return "\n".join(lines) + "\n"


class TrainingDiverged(RuntimeError):
    pass


def model_config_for(config, patch_shape):
    return EddyNetConfig(variant=config.variant, dropout_rate=config.dropout_rate,
                         input_size=tuple(patch_shape), **config.model_overrides)


def evaluate_validation(weights, val_set, loss_kind="dice", batch_size=16):
    """Infer-mode loss and metric report over the whole validation set.

    The dice loss pools its sums over every pixel of the set.
    """
    x, y = stack_patches(val_set)
    prob = predict_proba(weights, x, batch_size)
    loss, _ = losses.LOSSES[loss_kind](prob, one_hot(y))
    report = losses.metric_report(prob.argmax(axis=1), y)
    return loss, report


def train(config, train_set, val_set, log_fn=None):
    """Train from scratch; returns ``(best_weights, history)``.

    Each epoch shuffles the training patches, drops the last partial batch,
    and takes one ADAM step per batch. Training stops once the validation
    loss has not improved by more than ``MIN_DELTA`` for ``patience`` epochs.
    The returned weights (BN statistics included) are the snapshot taken at
    the epoch with the lowest validation loss.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must both be non-empty")
    if len(train_set) < config.batch_size:
        raise ValueError(f"{len(train_set)} training patches cannot fill one batch of {config.batch_size}")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seeds)

    cfg = model_config_for(config, train_set[0].ssh.shape)
    weights = build_model(cfg, init_rng)
    history = TrainingHistory()
    if config.max_epochs == 0:
        return weights, history

    x_all, y_all = stack_patches(train_set)
    params = flat_params(weights)
    state = AdamState(learning_rate=config.learning_rate)
    loss_fn = losses.LOSSES[config.loss]
    best, best_loss = weights.copy(), np.inf
    n_batches = len(train_set) // config.batch_size
    emit = log_fn or log.info

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            prob, cache = forward(weights, x_all[idx], "train", dropout_rng)
            loss, grad = loss_fn(prob, one_hot(y_all[idx]))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            _, grads = backward(weights, cache, grad)
            adam_step(params, flatten_grads(grads), state)
            total += loss
        val_loss, report = evaluate_validation(weights, val_set, config.loss, config.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        seconds = time.perf_counter() - t0 if config.record_time else 0.0
        history.epochs.append(EpochRecord(epoch, total / n_batches, val_loss, report.mean_dice, seconds))
        emit(f"epoch {epoch}: train {total / n_batches:.4f} val {val_loss:.4f} "
             f"dice {report.mean_dice:.4f} ({seconds:.1f}s)")
        if val_loss < best_loss - MIN_DELTA:
            best_loss = val_loss
            best = weights.copy()
            history.best_epoch = epoch
        elif epoch - history.best_epoch >= config.patience:
            break
    return best, history


def checkpoint(weights, history, directory):
    """Write ``weights.edyn`` and ``history.csv``; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    wpath = directory / "weights.edyn"
    hpath = directory / "history.csv"
    save_weights(weights, wpath)
    hpath.write_text(history.to_csv(), encoding="utf-8")
    return wpath, hpath


def load_history(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != HISTORY_HEADER:
        raise ValueError(f"{path}: not a history file")
    hist = TrainingHistory()
    for line in lines[1:]:
        e, tr, va, dice, sec = line.split(",")
        hist.epochs.append(EpochRecord(int(e), float(tr), float(va), float(dice), float(sec)))
    if hist.epochs:
        hist.best_epoch = min(hist.epochs, key=lambda r: r.val_loss).epoch
    return hist

