"""Minimal recurrent-network engine with explicit backpropagation through time.

Double precision throughout; tiny models, strict finite-difference gradient
checks. No autodiff, no GPU.
"""

from .layers import DenseLayer, GruLayer, LstmLayer
from .losses import (
    log_softmax,
    mae_grad,
    mae_loss,
    softmax,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)
from .optim import (
    AdamState,
    EarlyStopping,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    dropout_apply,
)
from .model import KamRegressor, SequenceClassifier, load_model, save_model
from .gradcheck import finite_difference_check, relative_errors

__all__ = [
    "AdamState",
    "DenseLayer",
    "EarlyStopping",
    "GruLayer",
    "KamRegressor",
    "LstmLayer",
    "PlateauScheduler",
    "SequenceClassifier",
    "TrainConfig",
    "adam_step",
    "dropout_apply",
    "finite_difference_check",
    "load_model",
    "log_softmax",
    "mae_grad",
    "mae_loss",
    "relative_errors",
    "save_model",
    "softmax",
    "weighted_cross_entropy",
    "weighted_cross_entropy_grad",
]
