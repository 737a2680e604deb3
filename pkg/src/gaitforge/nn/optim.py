"""Adam, dropout, learning-rate plateau scheduling and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class TrainConfig:
    """Hyperparameters shared by the training loops."""

    learning_rate: float = 0.003
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: Optional[int] = 5   # None disables early stopping
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        # lr 0 is allowed: "no update" is a meaningful degenerate config.
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("patience must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class AdamState:
    """Per-parameter moment accumulators for Adam."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {key!r}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def dropout_apply(x: np.ndarray, rate: float, rng: np.random.Generator,
                  training: bool):
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Returns (output, mask); mask is None at inference or rate 0. Reusing the
    mask in the backward pass keeps the gradient exact.
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError("dropout rate must be in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without a validation-loss improvement greater than ``threshold``."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10,
                 threshold: float = 1e-4, min_lr: float = 1e-6):
        if not (0.0 < factor < 1.0):
            raise ValueError("factor must be in (0, 1)")
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the (possibly reduced) lr."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stale = 0
        return self.lr


class EarlyStopping:
    """Stop after ``patience`` epochs without improvement; keeps the best
    parameter snapshot for restoration."""

    def __init__(self, patience: int = 5):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_params: Optional[dict[str, np.ndarray]] = None
        self.epoch = 0
        self.stale = 0

    def update(self, val_loss: float, params: Optional[dict[str, np.ndarray]] = None) -> bool:
        """Record one epoch; returns True when training should stop."""
        self.epoch += 1
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.stale = 0
            if params is not None:
                self.best_params = {k: p.copy() for k, p in params.items()}
            return False
        self.stale += 1
        return self.stale >= self.patience

    def restore(self, params: dict[str, np.ndarray]) -> None:
        """Copy the best snapshot back into ``params`` (no-op if none kept)."""
        if self.best_params is None:
            return
        for k, p in params.items():
            p[...] = self.best_params[k]
