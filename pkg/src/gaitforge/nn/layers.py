"""GRU, LSTM and dense layers with exact analytic backward passes.

Gate conventions (fixed so the scalar test oracles are unambiguous):

GRU:   r = sigmoid(W_r x + b_ir + U_r h + b_hr)
       z = sigmoid(W_z x + b_iz + U_z h + b_hz)
       n = tanh(W_n x + b_in + r * (U_n h + b_hn))
       h' = (1 - z) * n + z * h

LSTM:  i, f, o = sigmoid(W x + U h + b),  g = tanh(W x + U h + b)
       c' = f * c + i * g
       h' = o * tanh(c')

Sequences are (T, B, input) batched or (T, input) single; hidden states are
(B, H) / (H,). Parameters live in an ordered ``params`` dict per layer and
gradients come back keyed identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _uniform_init(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def _as_batched(x_seq: np.ndarray, input_size: int):
    x = np.asarray(x_seq, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != input_size:
            raise ValueError(f"expected input size {input_size}, got {x.shape[1]}")
        return x[:, None, :], True
    if x.ndim == 3:
        if x.shape[2] != input_size:
            raise ValueError(f"expected input size {input_size}, got {x.shape[2]}")
        return x, False
    raise ValueError("x_seq must be (T, input) or (T, batch, input)")


def _as_state(h0, batch: int, hidden: int) -> np.ndarray:
    if h0 is None:
        return np.zeros((batch, hidden))
    h = np.asarray(h0, dtype=np.float64)
    if h.ndim == 1:
        h = np.broadcast_to(h, (batch, hidden)).copy()
    if h.shape != (batch, hidden):
        raise ValueError(f"state must be ({batch}, {hidden}), got {h.shape}")
    return h


@dataclass
class GruCache:
    layer: object
    x: np.ndarray        # (T, B, I)
    h_prev: np.ndarray   # (T, B, H), h_prev[t] is the state entering step t
    h: np.ndarray        # (T, B, H)
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    m: np.ndarray        # U_n h_prev + b_hn
    squeezed: bool


class GruLayer:
    """Gated recurrent unit over a sequence, PyTorch gate convention."""

    def __init__(self, input_size: int, hidden_size: int,
                 rng: Optional[np.random.Generator] = None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        rng = rng or np.random.default_rng(0)
        s = 1.0 / np.sqrt(hidden_size)
        self.params: dict[str, np.ndarray] = {}
        for gate in ("r", "z", "n"):
            self.params[f"w_{gate}"] = _uniform_init(rng, (hidden_size, input_size), s)
            self.params[f"u_{gate}"] = _uniform_init(rng, (hidden_size, hidden_size), s)
        for name in ("b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"):
            self.params[name] = _uniform_init(rng, (hidden_size,), s)

    def forward(self, x_seq: np.ndarray, h0=None):
        """Run the full sequence; returns (h_seq, cache)."""
        p = self.params
        x, squeezed = _as_batched(x_seq, self.input_size)
        T, B, _ = x.shape
        H = self.hidden_size
        h = _as_state(h0, B, H)

        w_in = np.concatenate([p["w_r"], p["w_z"], p["w_n"]], axis=0)      # (3H, I)
        b_in = np.concatenate([p["b_ir"], p["b_iz"], p["b_in"]])
        x_proj = (x.reshape(T * B, -1) @ w_in.T + b_in).reshape(T, B, 3 * H)
        u_rz = np.concatenate([p["u_r"], p["u_z"]], axis=0)                # (2H, H)
        b_rz = np.concatenate([p["b_hr"], p["b_hz"]])

        h_prev = np.empty((T, B, H))
        h_out = np.empty((T, B, H))
        r_all = np.empty((T, B, H))
        z_all = np.empty((T, B, H))
        n_all = np.empty((T, B, H))
        m_all = np.empty((T, B, H))
        for t in range(T):
            h_prev[t] = h
            rz = h @ u_rz.T + b_rz
            r = _sigmoid(x_proj[t, :, :H] + rz[:, :H])
            z = _sigmoid(x_proj[t, :, H:2 * H] + rz[:, H:])
            m = h @ p["u_n"].T + p["b_hn"]
            n = np.tanh(x_proj[t, :, 2 * H:] + r * m)
            h = (1.0 - z) * n + z * h
            r_all[t], z_all[t], n_all[t], m_all[t], h_out[t] = r, z, n, m, h

        cache = GruCache(self, x, h_prev, h_out, r_all, z_all, n_all, m_all, squeezed)
        h_seq = h_out[:, 0, :] if squeezed else h_out
        return h_seq, cache

    def backward(self, cache: GruCache, dh_seq: np.ndarray):
        """Gradients of a scalar loss given d loss / d h_seq.

        Returns (grads, dx_seq) with grads keyed like ``params``.
        """
        if cache.layer is not self:
            raise ValueError("cache does not belong to this layer")
        p = self.params
        dh_up = np.asarray(dh_seq, dtype=np.float64)
        if cache.squeezed:
            dh_up = dh_up[:, None, :]
        if dh_up.shape != cache.h.shape:
            raise ValueError(f"dh_seq shape {dh_up.shape} != h_seq {cache.h.shape}")

        T, B, H = cache.h.shape
        da_r = np.empty((T, B, H))
        da_z = np.empty((T, B, H))
        da_n = np.empty((T, B, H))
        dm = np.empty((T, B, H))
        u_all = np.concatenate([p["u_r"], p["u_z"], p["u_n"]], axis=0)  # (3H, H)

        dh = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + dh_up[t]
            r, z, n, m = cache.r[t], cache.z[t], cache.n[t], cache.m[t]
            h_prev = cache.h_prev[t]
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dan = dn * (1.0 - n * n)
            dr = dan * m
            dm_t = dan * r
            dar = dr * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            da_r[t], da_z[t], da_n[t], dm[t] = dar, daz, dan, dm_t
            dh = dh * z + np.concatenate([dar, daz, dm_t], axis=1) @ u_all

        x_flat = cache.x.reshape(T * B, -1)
        hp_flat = cache.h_prev.reshape(T * B, H)
        flat = {k: v.reshape(T * B, H) for k, v in
                (("r", da_r), ("z", da_z), ("n", da_n), ("m", dm))}
        grads = {}
        for gate in ("r", "z", "n"):
            grads[f"w_{gate}"] = flat[gate].T @ x_flat
            grads[f"b_i{gate}"] = flat[gate].sum(axis=0)
        for gate, key in (("r", "r"), ("z", "z"), ("n", "m")):
            grads[f"u_{gate}"] = flat[key].T @ hp_flat
            grads[f"b_h{gate}"] = flat[key].sum(axis=0)

        w_all = np.concatenate([p["w_r"], p["w_z"], p["w_n"]], axis=0)
        dx = (np.concatenate([flat["r"], flat["z"], flat["n"]], axis=1)
              @ w_all).reshape(T, B, -1)
        if cache.squeezed:
            dx = dx[:, 0, :]
        return grads, dx


@dataclass
class LstmCache:
    layer: object
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    h: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    squeezed: bool


class LstmLayer:
    """Long short-term memory layer with the standard i/f/g/o gate set."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, input_size: int, hidden_size: int,
                 rng: Optional[np.random.Generator] = None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        rng = rng or np.random.default_rng(0)
        s = 1.0 / np.sqrt(hidden_size)
        self.params: dict[str, np.ndarray] = {}
        for gate in self.GATES:
            self.params[f"w_{gate}"] = _uniform_init(rng, (hidden_size, input_size), s)
            self.params[f"u_{gate}"] = _uniform_init(rng, (hidden_size, hidden_size), s)
            self.params[f"b_{gate}"] = _uniform_init(rng, (hidden_size,), s)

    def forward(self, x_seq: np.ndarray, h0=None, c0=None):
        """Run the full sequence; returns (h_seq, cache)."""
        p = self.params
        x, squeezed = _as_batched(x_seq, self.input_size)
        T, B, _ = x.shape
        H = self.hidden_size
        h = _as_state(h0, B, H)
        c = _as_state(c0, B, H)

        w_all = np.concatenate([p[f"w_{g}"] for g in self.GATES], axis=0)  # (4H, I)
        u_all = np.concatenate([p[f"u_{g}"] for g in self.GATES], axis=0)
        b_all = np.concatenate([p[f"b_{g}"] for g in self.GATES])
        x_proj = (x.reshape(T * B, -1) @ w_all.T + b_all).reshape(T, B, 4 * H)

        caches = {k: np.empty((T, B, H)) for k in
                  ("h_prev", "c_prev", "h", "c", "i", "f", "g", "o")}
        for t in range(T):
            caches["h_prev"][t] = h
            caches["c_prev"][t] = c
            a = x_proj[t] + h @ u_all.T
            i = _sigmoid(a[:, :H])
            f = _sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = _sigmoid(a[:, 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            for k, v in (("i", i), ("f", f), ("g", g), ("o", o), ("c", c), ("h", h)):
                caches[k][t] = v

        cache = LstmCache(self, x, caches["h_prev"], caches["c_prev"],
                          caches["h"], caches["c"], caches["i"], caches["f"],
                          caches["g"], caches["o"], squeezed)
        h_seq = caches["h"][:, 0, :] if squeezed else caches["h"]
        return h_seq, cache

    def backward(self, cache: LstmCache, dh_seq: np.ndarray):
        """Gradients of a scalar loss given d loss / d h_seq."""
        if cache.layer is not self:
            raise ValueError("cache does not belong to this layer")
        p = self.params
        dh_up = np.asarray(dh_seq, dtype=np.float64)
        if cache.squeezed:
            dh_up = dh_up[:, None, :]
        if dh_up.shape != cache.h.shape:
            raise ValueError(f"dh_seq shape {dh_up.shape} != h_seq {cache.h.shape}")

        T, B, H = cache.h.shape
        da = {g: np.empty((T, B, H)) for g in self.GATES}
        u_all = np.concatenate([p[f"u_{g}"] for g in self.GATES], axis=0)

        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + dh_up[t]
            i, f, g, o = cache.i[t], cache.f[t], cache.g[t], cache.o[t]
            tc = np.tanh(cache.c[t])
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * cache.c_prev[t]
            dg = dc * i
            da["i"][t] = di * i * (1.0 - i)
            da["f"][t] = df * f * (1.0 - f)
            da["g"][t] = dg * (1.0 - g * g)
            da["o"][t] = do * o * (1.0 - o)
            dat = np.concatenate([da[g_][t] for g_ in self.GATES], axis=1)
            dh = dat @ u_all
            dc = dc * f

        x_flat = cache.x.reshape(T * B, -1)
        hp_flat = cache.h_prev.reshape(T * B, H)
        grads = {}
        for gate in self.GATES:
            flat = da[gate].reshape(T * B, H)
            grads[f"w_{gate}"] = flat.T @ x_flat
            grads[f"u_{gate}"] = flat.T @ hp_flat
            grads[f"b_{gate}"] = flat.sum(axis=0)

        w_all = np.concatenate([p[f"w_{g}"] for g in self.GATES], axis=0)
        da_flat = np.concatenate([da[g].reshape(T * B, H) for g in self.GATES], axis=1)
        dx = (da_flat @ w_all).reshape(T, B, -1)
        if cache.squeezed:
            dx = dx[:, 0, :]
        return grads, dx


@dataclass
class DenseCache:
    layer: object
    x: np.ndarray
    pre: np.ndarray
    out: np.ndarray


class DenseLayer:
    """Affine map with relu, linear or softmax activation, applied along the
    last axis (so it works per timestep on stacked sequences)."""

    ACTIVATIONS = ("relu", "linear", "softmax")

    def __init__(self, input_size: int, output_size: int, activation: str = "linear",
                 rng: Optional[np.random.Generator] = None):
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.input_size = input_size
        self.output_size = output_size
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        s = 1.0 / np.sqrt(input_size)
        self.params: dict[str, np.ndarray] = {
            "weight": _uniform_init(rng, (output_size, input_size), s),
            "bias": _uniform_init(rng, (output_size,), s),
        }

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_size:
            raise ValueError(f"expected input size {self.input_size}, got {x.shape[-1]}")
        pre = x @ self.params["weight"].T + self.params["bias"]
        if self.activation == "relu":
            out = np.maximum(pre, 0.0)
        elif self.activation == "softmax":
            shifted = pre - pre.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            out = e / e.sum(axis=-1, keepdims=True)
        else:
            out = pre
        return out, DenseCache(self, x, pre, out)

    def backward(self, cache: DenseCache, dout: np.ndarray):
        if cache.layer is not self:
            raise ValueError("cache does not belong to this layer")
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != cache.out.shape:
            raise ValueError("upstream gradient shape mismatch")
        if self.activation == "relu":
            dpre = dout * (cache.pre > 0.0)
        elif self.activation == "softmax":
            p = cache.out
            dpre = p * (dout - (dout * p).sum(axis=-1, keepdims=True))
        else:
            dpre = dout
        x2 = cache.x.reshape(-1, self.input_size)
        d2 = dpre.reshape(-1, self.output_size)
        grads = {"weight": d2.T @ x2, "bias": d2.sum(axis=0)}
        dx = (d2 @ self.params["weight"]).reshape(cache.x.shape)
        return grads, dx
