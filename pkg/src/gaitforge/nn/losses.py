"""Losses and softmax helpers.

Weighted cross entropy follows the weighted-mean convention: the batch loss
is sum(w_target * nll) / sum(w_target), which keeps the loss scale comparable
across class-weight choices.
"""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _check_ce_inputs(logits, targets, weights):
    logits = np.asarray(logits, dtype=np.float64)
    squeezed = logits.ndim == 1
    if squeezed:
        logits = logits[None, :]
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    weights = np.asarray(weights, dtype=np.float64)
    n_classes = logits.shape[1]
    if weights.shape != (n_classes,):
        raise ValueError(f"weights must have shape ({n_classes},)")
    if np.any(weights <= 0.0):
        raise ValueError("class weights must be positive")
    if targets.shape[0] != logits.shape[0]:
        raise ValueError("batch size mismatch between logits and targets")
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise ValueError("target class out of range")
    return logits, targets, weights, squeezed


def weighted_cross_entropy(logits, targets, weights) -> float:
    """Class-weighted cross entropy from raw logits (weighted-mean reduction)."""
    logits, targets, weights, _ = _check_ce_inputs(logits, targets, weights)
    logp = log_softmax(logits, axis=1)
    w = weights[targets]
    nll = -logp[np.arange(logits.shape[0]), targets]
    return float((w * nll).sum() / w.sum())


def weighted_cross_entropy_grad(logits, targets, weights) -> np.ndarray:
    """d loss / d logits for ``weighted_cross_entropy`` (same shape as logits)."""
    logits, targets, weights, squeezed = _check_ce_inputs(logits, targets, weights)
    p = softmax(logits, axis=1)
    w = weights[targets]
    grad = p * w[:, None]
    grad[np.arange(logits.shape[0]), targets] -= w
    grad /= w.sum()
    return grad[0] if squeezed else grad


def mae_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mae_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Subgradient of ``mae_loss`` w.r.t. ``pred`` (0 at exact ties)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return np.sign(pred - target) / pred.size
