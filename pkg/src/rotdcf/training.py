"""Mini-batch SGD with momentum, evaluation, and per-epoch metrics.

The learning rate decays log-linearly between the configured endpoints:
lr(e) = lr_start * (lr_end / lr_start)^(e / (epochs - 1)).  Training is
deterministic for a fixed seed: shuffling uses its own generator and
gradient reduction order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .network import Network


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0.0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.lr_start
        frac = epoch / (self.epochs - 1)
        return float(self.lr_start * (self.lr_end / self.lr_start) ** frac)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float

    def as_row(self):
        return [self.epoch, self.lr, self.train_loss, self.train_acc, self.test_acc]


METRICS_HEADER = "epoch,lr,train_loss,train_acc,test_acc"


@dataclass
class TrainResult:
    metrics: list[EpochMetrics] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def final_test_acc(self) -> float:
        return self.metrics[-1].test_acc if self.metrics else float("nan")


def evaluate(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    """Argmax-of-logits accuracy; deterministic and order-invariant."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    hits = 0
    for lo in range(0, len(dataset), batch_size):
        pred = net.predict(dataset.images[lo : lo + batch_size])
        hits += int((pred == dataset.labels[lo : lo + batch_size]).sum())
    return hits / len(dataset)


def train(
    net: Network,
    dataset: Dataset,
    config: TrainConfig,
    test_set: Dataset | None = None,
    stop_at_test_acc: float | None = None,
    log=None,
) -> TrainResult:
    """Shuffled mini-batch SGD with momentum over the configured epochs.

    Evaluates on test_set after every epoch when given; optionally stops as
    soon as the test accuracy reaches stop_at_test_acc.  Raises
    TrainingDiverged on a non-finite loss.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    velocity = {name: np.zeros_like(p) for name, p in net.named_params()}
    result = TrainResult()

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(len(dataset))
        losses = []
        hits = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            x = dataset.images[idx]
            y = dataset.labels[idx]
            net.zero_grads()
            loss = net.loss_and_grad(x, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, step {lo // config.batch_size} "
                    f"(lr={lr:.3g}); try a lower learning rate"
                )
            losses.append(loss * len(idx))
            hits += int((net.last_logits.argmax(axis=1) == y).sum())
            for (name, p), (_, g) in zip(net.named_params(), net.named_grads()):
                v = velocity[name]
                v *= config.momentum
                v -= lr * g
                p += v
        train_loss = float(np.sum(losses) / len(order))
        train_acc = hits / len(order)
        test_acc = evaluate(net, test_set) if test_set is not None else float("nan")
        row = EpochMetrics(epoch, lr, train_loss, train_acc, test_acc)
        result.metrics.append(row)
        if log is not None:
            log(row)
        if stop_at_test_acc is not None and test_acc >= stop_at_test_acc:
            result.stopped_early = True
            break
    return result
