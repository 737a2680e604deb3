"""Recurrent models for the pipeline, plus versioned binary checkpoints.

Two shapes are used downstream:

- ``SequenceClassifier``: GRU encoder, dense softmax head over the final
  hidden state (activity classification).
- ``KamRegressor``: LSTM unrolled over the 101-point stride, dense relu,
  then a dense linear head emitting one value per time step (KAM waveform).

Both standardize their raw inputs with per-channel statistics fitted on the
training split; the statistics travel inside the checkpoint so inference
takes raw windows.

Checkpoint layout (little-endian): magic b"VSNN", version u16 == 1, meta
length u32, meta JSON (model kind, sizes, tensor names + shapes), then all
tensors as contiguous float64 payload in meta order. Round-trips are exact.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Optional

import numpy as np

from .layers import DenseLayer, GruLayer, LstmLayer
from .losses import (
    mae_grad,
    mae_loss,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)
from .optim import dropout_apply

CHECKPOINT_MAGIC = b"VSNN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHI")


class _NormalizerMixin:
    """Per-channel z-scoring of raw inputs, fitted once on training data."""

    def fit_normalization(self, stacked: np.ndarray) -> None:
        """``stacked``: any (..., input_size) array of training features."""
        flat = stacked.reshape(-1, self.input_size)
        mu = flat.mean(axis=0)
        sigma = flat.std(axis=0)
        sigma = np.where(sigma < 1e-8, 1.0, sigma)
        self.norm_mu = mu
        self.norm_sigma = sigma

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.norm_mu) / self.norm_sigma


class SequenceClassifier(_NormalizerMixin):
    """GRU(input -> hidden) + dense softmax(n_classes) on the last hidden state."""

    kind = "classifier"

    def __init__(self, input_size: int, hidden_size: int = 16, n_classes: int = 5,
                 rng: Optional[np.random.Generator] = None, modality: str = ""):
        rng = rng or np.random.default_rng(0)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.n_classes = n_classes
        self.modality = modality
        self.gru = GruLayer(input_size, hidden_size, rng)
        self.head = DenseLayer(hidden_size, n_classes, activation="softmax", rng=rng)
        self.norm_mu = np.zeros(input_size)
        self.norm_sigma = np.ones(input_size)

    def all_params(self) -> dict[str, np.ndarray]:
        out = {f"gru.{k}": v for k, v in self.gru.params.items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def _encode(self, windows: np.ndarray):
        # windows: (B, T, I) raw features
        x = self._normalize(windows).transpose(1, 0, 2)
        h_seq, cache = self.gru.forward(x)
        return h_seq, cache

    def logits(self, windows: np.ndarray) -> np.ndarray:
        h_seq, _ = self._encode(windows)
        pre = h_seq[-1] @ self.head.params["weight"].T + self.head.params["bias"]
        return pre

    def probs(self, windows: np.ndarray) -> np.ndarray:
        """Softmax class probabilities for raw (B, T, I) windows."""
        from .losses import softmax

        return softmax(self.logits(windows), axis=-1)

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return np.argmax(self.probs(windows), axis=-1)

    def loss_and_grads(self, windows: np.ndarray, targets: np.ndarray,
                       class_weights: np.ndarray):
        """Weighted-CE loss and gradients for one raw batch."""
        h_seq, cache = self._encode(windows)
        h_last = h_seq[-1]
        logits = h_last @ self.head.params["weight"].T + self.head.params["bias"]
        loss = weighted_cross_entropy(logits, targets, class_weights)
        dlogits = weighted_cross_entropy_grad(logits, targets, class_weights)

        head_grads = {
            "weight": dlogits.T @ h_last,
            "bias": dlogits.sum(axis=0),
        }
        dh_last = dlogits @ self.head.params["weight"]
        dh_seq = np.zeros_like(h_seq)
        dh_seq[-1] = dh_last
        gru_grads, _ = self.gru.backward(cache, dh_seq)

        grads = {f"gru.{k}": v for k, v in gru_grads.items()}
        grads.update({f"head.{k}": v for k, v in head_grads.items()})
        return loss, grads

    def config(self) -> dict:
        return {
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "n_classes": self.n_classes,
            "modality": self.modality,
        }

    def extra_tensors(self) -> dict[str, np.ndarray]:
        return {"norm.mu": self.norm_mu, "norm.sigma": self.norm_sigma}

    @classmethod
    def from_config(cls, config: dict) -> "SequenceClassifier":
        return cls(config["input_size"], config["hidden_size"],
                   config["n_classes"], modality=config.get("modality", ""))


class KamRegressor(_NormalizerMixin):
    """LSTM + dense relu + dense linear(1) per stride time point.

    Targets are scale-normalized during training (``target_scale`` newton-
    meters per unit); ``predict`` returns newton-meters.
    """

    kind = "kam"

    def __init__(self, input_size: int, hidden_size: int, dense_size: int = 64,
                 rng: Optional[np.random.Generator] = None, activity: str = "",
                 with_knee_angle: bool = False):
        rng = rng or np.random.default_rng(0)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.dense_size = dense_size
        self.activity = activity
        self.with_knee_angle = with_knee_angle
        self.lstm = LstmLayer(input_size, hidden_size, rng)
        self.hidden_dense = DenseLayer(hidden_size, dense_size, activation="relu", rng=rng)
        self.out_dense = DenseLayer(dense_size, 1, activation="linear", rng=rng)
        self.norm_mu = np.zeros(input_size)
        self.norm_sigma = np.ones(input_size)
        self.target_scale = 1.0

    def all_params(self) -> dict[str, np.ndarray]:
        out = {f"lstm.{k}": v for k, v in self.lstm.params.items()}
        out.update({f"dense.{k}": v for k, v in self.hidden_dense.params.items()})
        out.update({f"out.{k}": v for k, v in self.out_dense.params.items()})
        return out

    def fit_target_scale(self, targets_nm: np.ndarray) -> None:
        scale = float(np.std(np.asarray(targets_nm, dtype=np.float64)))
        self.target_scale = scale if scale > 1e-8 else 1.0

    def _forward(self, samples: np.ndarray, rng=None, dropout: float = 0.0,
                 training: bool = False):
        # samples: (B, T, I) raw channels; output per time step.
        x = self._normalize(samples).transpose(1, 0, 2)
        h_seq, lstm_cache = self.lstm.forward(x)
        h_drop, mask = dropout_apply(h_seq, dropout, rng, training) \
            if training else (h_seq, None)
        mid, mid_cache = self.hidden_dense.forward(h_drop)
        out, out_cache = self.out_dense.forward(mid)
        pred = out[:, :, 0].T  # (B, T), normalized units
        return pred, (lstm_cache, mid_cache, out_cache, mask, h_seq.shape)

    def predict(self, samples: np.ndarray) -> np.ndarray:
        """KAM waveforms in newton-meters for raw (B, T, I) samples."""
        pred, _ = self._forward(samples)
        return pred * self.target_scale

    def loss_and_grads(self, samples: np.ndarray, targets_nm: np.ndarray,
                       rng: Optional[np.random.Generator] = None,
                       dropout: float = 0.0):
        """MAE loss (normalized target units) and gradients for one batch."""
        targets = np.asarray(targets_nm, dtype=np.float64) / self.target_scale
        pred, (lstm_cache, mid_cache, out_cache, mask, _) = self._forward(
            samples, rng=rng, dropout=dropout, training=True)
        loss = mae_loss(pred, targets)
        dpred = mae_grad(pred, targets)          # (B, T)
        dout = dpred.T[:, :, None]               # (T, B, 1)
        out_grads, dmid = self.out_dense.backward(out_cache, dout)
        mid_grads, dh = self.hidden_dense.backward(mid_cache, dmid)
        if mask is not None:
            dh = dh * mask
        lstm_grads, _ = self.lstm.backward(lstm_cache, dh)

        grads = {f"lstm.{k}": v for k, v in lstm_grads.items()}
        grads.update({f"dense.{k}": v for k, v in mid_grads.items()})
        grads.update({f"out.{k}": v for k, v in out_grads.items()})
        return loss, grads

    def config(self) -> dict:
        return {
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "dense_size": self.dense_size,
            "activity": self.activity,
            "with_knee_angle": self.with_knee_angle,
        }

    def extra_tensors(self) -> dict[str, np.ndarray]:
        return {
            "norm.mu": self.norm_mu,
            "norm.sigma": self.norm_sigma,
            "target_scale": np.array([self.target_scale]),
        }

    @classmethod
    def from_config(cls, config: dict) -> "KamRegressor":
        return cls(config["input_size"], config["hidden_size"],
                   config["dense_size"], activity=config.get("activity", ""),
                   with_knee_angle=config.get("with_knee_angle", False))


_MODEL_KINDS = {
    SequenceClassifier.kind: SequenceClassifier,
    KamRegressor.kind: KamRegressor,
}


def save_model(model, path_or_buffer) -> None:
    """Write a model checkpoint (exact float64 round-trip)."""
    tensors = dict(model.all_params())
    tensors.update(model.extra_tensors())
    meta = {
        "kind": model.kind,
        "config": model.config(),
        "tensors": [[name, list(t.shape)] for name, t in tensors.items()],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    for name, _ in meta["tensors"]:
        buf.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_buffer, "write"):
        path_or_buffer.write(data)
    else:
        from pathlib import Path

        Path(path_or_buffer).write_bytes(data)


def load_model(path_or_bytes):
    """Read a checkpoint written by ``save_model``.

    Raises:
        ValueError: bad magic, unsupported version, or truncated payload.
    """
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        from pathlib import Path

        data = Path(path_or_bytes).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise ValueError("not a model checkpoint (too short)")
    magic, version, meta_len = _CKPT_HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _CKPT_HEADER.size
    try:
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt checkpoint metadata: {exc}") from None
    off += meta_len

    kind = meta.get("kind")
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    model = _MODEL_KINDS[kind].from_config(meta["config"])

    params = model.all_params()
    loaded: dict[str, np.ndarray] = {}
    for name, shape in meta["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(data):
            raise ValueError(f"checkpoint truncated in tensor {name!r}")
        loaded[name] = np.frombuffer(data[off:off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes

    for name, p in params.items():
        if name not in loaded or loaded[name].shape != p.shape:
            raise ValueError(f"checkpoint missing tensor {name!r}")
        p[...] = loaded[name]
    model.norm_mu = loaded["norm.mu"]
    model.norm_sigma = loaded["norm.sigma"]
    if kind == KamRegressor.kind:
        model.target_scale = float(loaded["target_scale"][0])
    return model
