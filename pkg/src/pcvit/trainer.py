"""Cross-entropy training with Adam and early stopping on test accuracy.

The loop follows the reference protocol exactly: after every epoch the model
is scored on the held-out split, the checkpoint is overwritten only on a strict
improvement of test accuracy, and training halts once ``patience`` consecutive
epochs pass without one. Note that the early-stopping signal therefore comes
from the same split that is used for final reporting.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pcvit import tensor as T
from pcvit.dataset import LabeledDataset, batches
from pcvit.errors import ContractError
from pcvit.tensor import Tensor
from pcvit.vit import ViTParams, forward_logits, load_params, save_params

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_path: str | None = "best_model.pcvt"
    head_only: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ContractError("batch_size, max_epochs and patience must all be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ContractError("invalid Adam hyperparameters")


@dataclass
class TrainingState:
    best_test_accuracy: float = 0.0
    stall: int = 0
    epoch: int = 0
    best_epoch: int | None = None
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def record(self, epoch: int, test_accuracy: float) -> bool:
        """Update the early-stopping counters; True on strict improvement."""
        self.epoch = epoch
        if test_accuracy > self.best_test_accuracy:
            self.best_test_accuracy = test_accuracy
            self.best_epoch = epoch
            self.stall = 0
            return True
        self.stall += 1
        return False

    def should_stop(self, patience: int) -> bool:
        return self.stall >= patience


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float


@dataclass
class TrainResult:
    params: ViTParams
    history: list[EpochRecord]
    state: TrainingState

    @property
    def best_epoch(self) -> int | None:
        return self.state.best_epoch

    @property
    def stop_epoch(self) -> int:
        return self.history[-1].epoch if self.history else 0

    def __iter__(self):
        # allows ``params, history = train(...)``
        return iter((self.params, self.history))


class CheckpointWriteError(OSError):
    """Saving the best model failed; the in-memory run is attached."""

    def __init__(self, message, params, history, state):
        super().__init__(message)
        self.params = params
        self.history = history
        self.state = state


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or logits.shape[0] < 1:
        raise ContractError(f"logits {logits.shape} and labels {labels.shape} are incompatible")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ContractError(f"labels must lie in [0, {logits.shape[1]})")
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


def adam_step(params, state: TrainingState, config: TrainingConfig) -> None:
    """One bias-corrected Adam update of every trainable parameter, in place."""
    trainable = params.trainable() if isinstance(params, ViTParams) else {
        k: t for k, t in params.items() if t.requires_grad
    }
    for name, t in trainable.items():
        if t.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in trainable.items():
        g = t.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m.astype(t.dtype)
        state.v[name] = v.astype(t.dtype)
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        t.data = (t.data - update).astype(t.dtype)


def predict_batch(params: ViTParams, images: Tensor) -> np.ndarray:
    with T.no_grad():
        return forward_logits(images, params).data


def evaluate_epoch(params: ViTParams, ds: LabeledDataset, batch_size: int = 32) -> tuple[float, float]:
    """Sample-averaged loss and argmax accuracy; never records a graph."""
    if len(ds) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    correct = 0
    with T.no_grad():
        for x, y in batches(ds, batch_size, shuffle=False):
            logits = forward_logits(x, params)
            loss_sum += cross_entropy(logits, y).item() * len(y)
            correct += int((np.argmax(logits.data, axis=1) == y).sum())
    return loss_sum / len(ds), correct / len(ds)


def _checkpoint_metadata(epoch: int, acc: float, extra: dict | None = None) -> dict:
    meta = dict(extra or {})
    meta.update(epoch=str(epoch), test_accuracy=repr(float(acc)))
    return meta


def train(
    params: ViTParams,
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    config: TrainingConfig = TrainingConfig(),
    history_path: str | os.PathLike | None = None,
    evaluator: Callable[[ViTParams, LabeledDataset, int], tuple[float, float]] = evaluate_epoch,
    on_epoch_end: Callable[[int, ViTParams, EpochRecord], None] | None = None,
    checkpoint_metadata: dict | None = None,
) -> TrainResult:
    """Run the training loop and return parameters restored from the best epoch."""
    if len(train_set) == 0 or len(test_set) == 0:
        raise ContractError("train and test sets must be non-empty")
    params.set_trainable(config.head_only)
    state = TrainingState()
    history: list[EpochRecord] = []
    best_snapshot = None

    log = None
    if history_path is not None:
        log = open(history_path, "w", newline="")
        writer = csv.writer(log, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        log.flush()
    try:
        for epoch in range(1, config.max_epochs + 1):
            loss_sum, correct, seen = 0.0, 0, 0
            for x, y in batches(train_set, config.batch_size, shuffle=True, seed=config.seed, epoch=epoch):
                logits = forward_logits(x, params)
                loss = cross_entropy(logits, y)
                T.backward(loss)
                adam_step(params, state, config)
                params.zero_grad()
                loss_sum += loss.item() * len(y)
                correct += int((np.argmax(logits.data, axis=1) == y).sum())
                seen += len(y)

            test_loss, test_acc = evaluator(params, test_set, config.batch_size)
            rec = EpochRecord(epoch, loss_sum / seen, correct / seen, float(test_loss), float(test_acc))
            history.append(rec)
            if log is not None:
                writer.writerow([epoch, repr(rec.train_loss), repr(rec.train_accuracy),
                                 repr(rec.test_loss), repr(rec.test_accuracy)])
                log.flush()
            logger.info(
                "epoch %d: train loss %.4f acc %.4f | test loss %.4f acc %.4f",
                epoch, rec.train_loss, rec.train_accuracy, rec.test_loss, rec.test_accuracy,
            )

            if state.record(epoch, rec.test_accuracy):
                best_snapshot = params.arrays()
                if config.checkpoint_path is not None:
                    try:
                        meta = _checkpoint_metadata(epoch, rec.test_accuracy, checkpoint_metadata)
                        save_params(config.checkpoint_path, params, meta)
                    except OSError as exc:
                        raise CheckpointWriteError(
                            f"could not write checkpoint {config.checkpoint_path}: {exc}", params, history, state
                        ) from exc
            if on_epoch_end is not None:
                on_epoch_end(epoch, params, rec)
            if state.should_stop(config.patience):
                logger.info("early stop after epoch %d (best epoch %s)", epoch, state.best_epoch)
                break
    finally:
        if log is not None:
            log.close()

    if best_snapshot is None:
        # test accuracy never rose above zero; keep the final weights
        logger.warning("test accuracy never improved on 0; returning final parameters")
        if config.checkpoint_path is not None:
            save_params(config.checkpoint_path, params, _checkpoint_metadata(state.epoch, 0.0, checkpoint_metadata))
        best = params.copy()
    elif config.checkpoint_path is not None:
        best = load_params(config.checkpoint_path)
    else:
        best = ViTParams.from_arrays(params.config, best_snapshot)
    best.set_trainable(config.head_only)
    return TrainResult(best, history, state)


def predict_proba(params: ViTParams, ds: LabeledDataset, batch_size: int = 32) -> np.ndarray:
    """Softmax outputs ``[N, C]`` for a whole dataset, in dataset order."""
    out = []
    with T.no_grad():
        for x, _ in batches(ds, batch_size, shuffle=False):
            out.append(T.softmax(forward_logits(x, params), axis=-1).data)
    return np.concatenate(out)


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_accuracy"]),
                        float(r["test_loss"]), float(r["test_accuracy"]))
            for r in reader
        ]
