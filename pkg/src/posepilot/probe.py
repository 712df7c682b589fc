"""Frozen-embedding linear probe: multinomial logistic regression trained
by mini-batch gradient descent with validation-loss early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backends.base import Embedding
from .errors import InputError
from .labels import ClassLabel


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.5
    max_epochs: int = 200
    patience: int = 5
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if self.patience < 1:
            raise InputError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise InputError("max_epochs and batch_size must be >= 1")


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise InputError("patience must be >= 1")
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's validation loss; True if training should stop."""
        self.epoch += 1
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy and its analytic gradient.

    weights: (d, k); bias: (k,); x: (n, d); y: (n,) int class indices.
    """
    n = x.shape[0]
    probs = softmax_rows(x @ weights + bias)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + eps)))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, x.T @ delta, delta.sum(axis=0)


def mean_ce(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    probs = softmax_rows(x @ weights + bias)
    eps = np.finfo(np.float64).tiny
    return float(-np.mean(np.log(probs[np.arange(x.shape[0]), y] + eps)))


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: np.ndarray
    classes: tuple[ClassLabel, ...]
    best_epoch: int = 0
    stopped_epoch: int = 0
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    def predict(self, x: np.ndarray) -> list[ClassLabel]:
        idx = np.argmax(x @ self.weights + self.bias, axis=1)
        return [self.classes[i] for i in idx]

    def predict_embeddings(self, embs: Sequence[Embedding]) -> list[ClassLabel]:
        x = np.stack([e.vector.astype(np.float64) for e in embs])
        return self.predict(x)


def _to_arrays(
    data: Sequence[tuple[Embedding, ClassLabel]], classes: tuple[ClassLabel, ...]
) -> tuple[np.ndarray, np.ndarray]:
    index = {lab: i for i, lab in enumerate(classes)}
    x = np.stack([e.vector.astype(np.float64) for e, _ in data])
    y = np.asarray([index[lab] for _, lab in data], dtype=np.int64)
    return x, y


def train_linear_probe(
    train: Sequence[tuple[Embedding, ClassLabel]],
    val: Sequence[tuple[Embedding, ClassLabel]],
    cfg: ProbeConfig = ProbeConfig(),
    seed: int = 0,
) -> ProbeModel:
    """Train and return the best-validation snapshot.

    Deterministic for a given seed: weights start at zero and the only
    randomness is the seeded per-epoch shuffle.
    """
    if not train or not val:
        raise InputError("train and val must both be non-empty")
    classes = tuple(sorted({lab for _, lab in train}, key=int))
    if len(classes) < 2:
        raise InputError("need at least two classes in train")
    dims = {e.dim for e, _ in list(train) + list(val)}
    if len(dims) != 1:
        raise InputError(f"mixed embedding dims {sorted(dims)}")

    x_train, y_train = _to_arrays(train, classes)
    x_val, y_val = _to_arrays(val, classes)
    d, k = x_train.shape[1], len(classes)
    weights = np.zeros((d, k))
    bias = np.zeros(k)
    best_w, best_b = weights.copy(), bias.copy()

    rng = np.random.Generator(np.random.PCG64(seed))
    stopper = EarlyStopper(cfg.patience)
    train_losses: list[float] = []
    val_losses: list[float] = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_train))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            loss, gw, gb = loss_and_grad(weights, bias, x_train[batch], y_train[batch])
            if not np.isfinite(loss):
                raise InputError(
                    f"training diverged at epoch {epoch} (loss={loss}); "
                    f"lr={cfg.learning_rate}, batch={cfg.batch_size}"
                )
            weights -= cfg.learning_rate * gw
            bias -= cfg.learning_rate * gb
        train_losses.append(mean_ce(weights, bias, x_train, y_train))
        val_loss = mean_ce(weights, bias, x_val, y_val)
        val_losses.append(val_loss)
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best_w, best_b = weights.copy(), bias.copy()
        if stop:
            break

    return ProbeModel(
        weights=best_w,
        bias=best_b,
        classes=classes,
        best_epoch=stopper.best_epoch,
        stopped_epoch=stopper.epoch,
        train_losses=train_losses,
        val_losses=val_losses,
    )
