from __future__ import annotations

import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Protocol

import numpy as np
import pandas as pd

from gaitscale.errors import GaitscaleError
from gaitscale.gradcore.layers import Module
from gaitscale.gradcore.layers import mse_loss
from gaitscale.gradcore.optim import Adam
from gaitscale.gradcore.tensor import Tensor

logger = logging.getLogger(__name__)


class NonFiniteLoss(GaitscaleError):
    """Training produced a NaN or infinite loss."""


class Batchable(Protocol):
    targets: np.ndarray

    def __len__(self) -> int: ...

    def subset(self, indices: np.ndarray) -> Batchable: ...


class Trainable(Protocol):
    def forward_batch(self, data: Batchable) -> Tensor: ...


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 50
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError(f"invalid training configuration: {self}")


@dataclass
class History:
    """Per-epoch training record; epochs count from 0."""

    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": self.epochs, "train_mse": self.train_mse, "val_mse": self.val_mse})


def evaluate_mse(model, data: Batchable, batch_size: int = 256) -> float:
    model.eval()
    total = 0.0
    n = len(data)
    for start in range(0, n, batch_size):
        batch = data.subset(np.arange(start, min(start + batch_size, n)))
        pred = model.forward_batch(batch).data
        total += float(np.sum((pred - batch.targets) ** 2))
    return total / (n * data.targets.shape[1])


def predict_batches(model, data: Batchable, batch_size: int = 256) -> np.ndarray:
    model.eval()
    n = len(data)
    parts = [
        model.forward_batch(data.subset(np.arange(start, min(start + batch_size, n)))).data
        for start in range(0, n, batch_size)
    ]
    return np.concatenate(parts, axis=0)


def train_loop(model: Module, train: Batchable, val: Batchable, config: TrainConfig) -> History:
    """Mini-batch ADAM on MSE with early stopping on the validation split.

    Stops after ``patience`` epochs without a strict improvement of the
    validation MSE, or at ``max_epochs``. The parameters of the best
    validation epoch are loaded back into ``model``.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.parameters())
    history = History()
    best_state = model.state_dict()
    best_val = np.inf
    stale = 0
    n = len(train)
    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = train.subset(order[start : start + config.batch_size])
            loss = mse_loss(model.forward_batch(batch), batch.targets)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}, batch starting {start}")
            model.zero_grad()
            loss.backward()
            optimizer.step()
            total += value * len(batch)
        val_mse = evaluate_mse(model, val)
        if not np.isfinite(val_mse):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        history.epochs.append(epoch)
        history.train_mse.append(total / n)
        history.val_mse.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_state = model.state_dict()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    logger.debug(
        f"trained {len(history)} epochs, best epoch {history.best_epoch} "
        f"(val mse {history.best_val_mse:.6g})"
    )
    return history
