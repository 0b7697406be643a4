"""
Minimal neural training kernel.

Flat parameter vectors with a named layout, recurrent layers (simple tanh and
gated/LSTM) with backpropagation through time, the sequence autoencoder, the
frozen-encoder classifier, a small dense regressor, plain SGD and a central
difference gradient checker.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fallchain.utils.exceptions import (
    ArtifactError,
    LayoutMismatch,
    NonDistribution,
    NonFiniteGradient,
    ParameterValidationError,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

PARAMS_VERSION = 1
CELL_KINDS = ("simple_tanh", "gated")
N_CHANNELS = 6

Layout = Tuple[Tuple[str, Tuple[int, ...]], ...]
Batch = Union[np.ndarray, Tuple[np.ndarray, Optional[np.ndarray]]]


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    """Ordered (name, shape, fan_in) blocks of a model."""

    blocks: Tuple[Tuple[str, Tuple[int, ...], int], ...]

    @property
    def layout(self) -> Layout:
        return tuple((name, shape) for name, shape, _ in self.blocks)

    @property
    def size(self) -> int:
        return int(sum(int(np.prod(shape)) for _, shape, _ in self.blocks))

    def init(self, rng: Optional[np.random.Generator], zeros: bool = False) -> "ModelParams":
        """uniform(-s, s) with s = 1 / sqrt(fan_in) per block, or all zeros."""
        if zeros:
            return ModelParams(self.layout, np.zeros(self.size))
        parts = []
        for _, shape, fan_in in self.blocks:
            s = 1.0 / np.sqrt(max(fan_in, 1))
            parts.append(rng.uniform(-s, s, size=int(np.prod(shape))))
        return ModelParams(self.layout, np.concatenate(parts) if parts else np.zeros(0))


class ModelParams:
    """Flat float64 vector plus the layout that names its blocks."""

    def __init__(self, layout: Layout, vector: np.ndarray, version: int = PARAMS_VERSION):
        self.layout: Layout = tuple((str(name), tuple(int(d) for d in shape)) for name, shape in layout)
        self.vector = np.ascontiguousarray(vector, dtype=np.float64).reshape(-1)
        self.version = version
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if self.vector.size != expected:
            raise LayoutMismatch(f"vector has {self.vector.size} values, layout needs {expected}")
        self._offsets: Dict[str, Tuple[int, int, Tuple[int, ...]]] = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self._offsets[name] = (offset, offset + size, shape)
            offset += size

    def __len__(self) -> int:
        return int(self.vector.size)

    def __repr__(self) -> str:
        return f"ModelParams({len(self.layout)} blocks, {self.vector.size} values)"

    def names(self) -> List[str]:
        return [name for name, _ in self.layout]

    def view(self, name: str) -> np.ndarray:
        start, stop, shape = self._offsets[name]
        return self.vector[start:stop].reshape(shape)

    def block_slice(self, name: str) -> slice:
        start, stop, _ = self._offsets[name]
        return slice(start, stop)

    def mask(self, prefixes: Sequence[str]) -> np.ndarray:
        """Boolean mask over the vector selecting blocks whose name starts with a prefix."""
        out = np.zeros(self.vector.size, dtype=bool)
        for name in self.names():
            if any(name.startswith(p) for p in prefixes):
                out[self.block_slice(name)] = True
        return out

    def subset(self, prefixes: Sequence[str]) -> "ModelParams":
        layout = tuple((n, s) for n, s in self.layout if any(n.startswith(p) for p in prefixes))
        vector = np.concatenate([self.view(n).reshape(-1) for n, _ in layout]) if layout else np.zeros(0)
        return ModelParams(layout, vector, self.version)

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.vector.copy(), self.version)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.layout, np.zeros_like(self.vector), self.version)

    def compatible(self, other: "ModelParams") -> bool:
        return self.layout == other.layout

    def digest(self, prefixes: Optional[Sequence[str]] = None) -> str:
        """sha256 over layout and little-endian parameter bytes (optionally a block subset)."""
        target = self if prefixes is None else self.subset(prefixes)
        h = hashlib.sha256()
        h.update(json.dumps([[n, list(s)] for n, s in target.layout]).encode("utf-8"))
        h.update(target.vector.astype("<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> Dict:
        return {
            "version": self.version,
            "layout": [[name, list(shape)] for name, shape in self.layout],
            "values": [float(v) for v in self.vector],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelParams":
        try:
            version = int(data["version"])
            layout = tuple((name, tuple(shape)) for name, shape in data["layout"])
            values = np.asarray(data["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ArtifactError(f"malformed parameter block: {e}")
        if version != PARAMS_VERSION:
            raise ArtifactError(f"unsupported parameter version {version}")
        return cls(layout, values, version)


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    """theta <- theta - lr * grad."""
    if not params.compatible(grads):
        raise LayoutMismatch("parameter and gradient layouts differ")
    if not np.all(np.isfinite(grads.vector)):
        raise NonFiniteGradient("gradient contains NaN or inf")
    return ModelParams(params.layout, params.vector - lr * grads.vector, params.version)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def cce_loss(probs: np.ndarray, label: Union[int, np.ndarray]) -> float:
    """-log p[label]; with a (B, K) matrix and (B,) labels, the batch mean."""
    probs = np.asarray(probs, dtype=np.float64)
    batch = np.atleast_2d(probs)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.shape[0] != batch.shape[0]:
        raise ShapeMismatch("cce_loss needs one label per probability row")
    if np.any(batch < 0) or np.any(np.abs(batch.sum(axis=1) - 1.0) > 1e-6):
        raise NonDistribution("probabilities must be non-negative and sum to 1")
    if np.any(labels < 0) or np.any(labels >= batch.shape[1]):
        raise ParameterValidationError(f"label out of range for {batch.shape[1]} classes")
    with np.errstate(divide="ignore"):
        picked = -np.log(batch[np.arange(batch.shape[0]), labels])
    return float(np.mean(picked))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Recurrent layers
# ---------------------------------------------------------------------------

def _gate_count(kind: str) -> int:
    return 4 if kind == "gated" else 1


def _rnn_blocks(prefix: str, kind: str, d_in: int, hidden: int):
    g = _gate_count(kind)
    fan_in = d_in + hidden
    return [
        (f"{prefix}.W", (g * hidden, d_in), fan_in),
        (f"{prefix}.U", (g * hidden, hidden), fan_in),
        (f"{prefix}.b", (g * hidden,), fan_in),
    ]


def rnn_forward(kind: str, W: np.ndarray, U: np.ndarray, b: np.ndarray, X: np.ndarray):
    """Run one recurrent layer over X (B, T, D); returns hidden states (B, T, H) and a cache."""
    B, T, _ = X.shape
    hidden = U.shape[1]
    H = np.zeros((B, T, hidden))
    h = np.zeros((B, hidden))
    if kind == "simple_tanh":
        for t in range(T):
            h = np.tanh(X[:, t] @ W.T + h @ U.T + b)
            H[:, t] = h
        return H, (X, H)

    C = np.zeros((B, T, hidden))
    TC = np.zeros((B, T, hidden))
    gates = np.zeros((B, T, 4 * hidden))
    c = np.zeros((B, hidden))
    for t in range(T):
        z = X[:, t] @ W.T + h @ U.T + b
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = _sigmoid(z[:, 3 * hidden:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        C[:, t] = c
        TC[:, t] = tc
        H[:, t] = h
    return H, (X, H, C, TC, gates)


def rnn_backward(kind: str, W: np.ndarray, U: np.ndarray, cache, dH: np.ndarray):
    """Backpropagation through time; returns (dX, dW, dU, db)."""
    X, H = cache[0], cache[1]
    B, T, _ = X.shape
    hidden = U.shape[1]
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(W.shape[0])
    dh_next = np.zeros((B, hidden))
    zeros = np.zeros((B, hidden))

    if kind == "simple_tanh":
        for t in reversed(range(T)):
            h = H[:, t]
            h_prev = H[:, t - 1] if t > 0 else zeros
            da = (dH[:, t] + dh_next) * (1.0 - h * h)
            dW += da.T @ X[:, t]
            dU += da.T @ h_prev
            db += da.sum(axis=0)
            dX[:, t] = da @ W
            dh_next = da @ U
        return dX, dW, dU, db

    _, _, C, TC, gates = cache
    dc_next = np.zeros((B, hidden))
    for t in reversed(range(T)):
        i = gates[:, t, :hidden]
        f = gates[:, t, hidden:2 * hidden]
        g = gates[:, t, 2 * hidden:3 * hidden]
        o = gates[:, t, 3 * hidden:]
        tc = TC[:, t]
        c_prev = C[:, t - 1] if t > 0 else zeros
        h_prev = H[:, t - 1] if t > 0 else zeros
        dh = dH[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dc_next = dc * f
        dW += dz.T @ X[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ W
        dh_next = dz @ U
    return dX, dW, dU, db


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

def _split_batch(batch: Batch) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if isinstance(batch, tuple):
        return np.asarray(batch[0], dtype=np.float64), (None if batch[1] is None else np.asarray(batch[1]))
    return np.asarray(batch, dtype=np.float64), None


class _Model:
    """Common plumbing: a ParamSpec, current parameters and a loss with gradient."""

    spec: ParamSpec
    frozen_prefixes: Tuple[str, ...] = ()

    def __init__(self, params: Optional[ModelParams] = None, seed: int = 0, zeros: bool = False,
                 rng: Optional[np.random.Generator] = None):
        self.logger = logging.getLogger(__name__)
        if params is None:
            params = self.spec.init(rng if rng is not None else np.random.default_rng(seed), zeros=zeros)
        elif params.layout != self.spec.layout:
            raise LayoutMismatch(f"{type(self).__name__} expects a different parameter layout")
        self.params = params

    def with_params(self, params: ModelParams):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        if params.layout != self.spec.layout:
            raise LayoutMismatch(f"{type(self).__name__} expects a different parameter layout")
        clone.params = params
        return clone

    def trainable_mask(self) -> np.ndarray:
        return ~self.params.mask(self.frozen_prefixes)

    def loss_and_grad(self, batch: Batch, params: Optional[ModelParams] = None) -> Tuple[float, ModelParams]:
        raise NotImplementedError

    def loss(self, batch: Batch, params: Optional[ModelParams] = None) -> float:
        return self.loss_and_grad(batch, params)[0]

    def config(self) -> Dict:
        raise NotImplementedError


class SequenceAutoencoder(_Model):
    """Three stacked recurrent encoder layers, mirrored decoder, per-timestep linear readout.

    The embedding is the last hidden state of the third encoder layer; the
    decoder reads that embedding repeated once per timestep.
    """

    def __init__(self, hidden_sizes: Sequence[int] = (32, 16, 8), cell_kind: str = "gated",
                 n_channels: int = N_CHANNELS, **kwargs):
        if cell_kind not in CELL_KINDS:
            raise ParameterValidationError(f"cell_kind must be one of {CELL_KINDS}")
        if len(hidden_sizes) != 3:
            raise ParameterValidationError("the autoencoder needs exactly three hidden sizes")
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.cell_kind = cell_kind
        self.n_channels = n_channels
        self.spec = self.build_spec(self.hidden_sizes, cell_kind, n_channels)
        super().__init__(**kwargs)

    @staticmethod
    def encoder_blocks(hidden_sizes: Sequence[int], cell_kind: str, n_channels: int = N_CHANNELS):
        h1, h2, h3 = hidden_sizes
        blocks = []
        for k, (d_in, h) in enumerate([(n_channels, h1), (h1, h2), (h2, h3)]):
            blocks += _rnn_blocks(f"enc{k}", cell_kind, d_in, h)
        return blocks

    @classmethod
    def build_spec(cls, hidden_sizes, cell_kind, n_channels=N_CHANNELS) -> ParamSpec:
        h1, h2, h3 = hidden_sizes
        blocks = cls.encoder_blocks(hidden_sizes, cell_kind, n_channels)
        for k, (d_in, h) in enumerate([(h3, h3), (h3, h2), (h2, h1)]):
            blocks += _rnn_blocks(f"dec{k}", cell_kind, d_in, h)
        blocks += [("out.W", (n_channels, h1), h1), ("out.b", (n_channels,), h1)]
        return ParamSpec(tuple(blocks))

    def config(self) -> Dict:
        return {"kind": "autoencoder", "hidden_sizes": list(self.hidden_sizes),
                "cell_kind": self.cell_kind, "n_channels": self.n_channels}

    def _check(self, X: np.ndarray) -> np.ndarray:
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.n_channels or X.shape[1] < 1:
            raise ShapeMismatch(f"expected windows shaped (l, {self.n_channels}), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ParameterValidationError("windows must be finite")
        return X

    def _encode(self, p: ModelParams, X: np.ndarray):
        a, caches = X, []
        for k in range(3):
            a, cache = rnn_forward(self.cell_kind, p.view(f"enc{k}.W"), p.view(f"enc{k}.U"),
                                   p.view(f"enc{k}.b"), a)
            caches.append(cache)
        return a, caches

    def embed(self, windows: np.ndarray, params: Optional[ModelParams] = None) -> np.ndarray:
        p = self.params if params is None else params
        X = self._check(np.asarray(windows, dtype=np.float64))
        states, _ = self._encode(p, X)
        return states[:, -1, :]

    def _forward(self, p: ModelParams, X: np.ndarray):
        enc_out, enc_caches = self._encode(p, X)
        z = enc_out[:, -1, :]
        a = np.repeat(z[:, None, :], X.shape[1], axis=1)
        dec_caches = []
        for k in range(3):
            a, cache = rnn_forward(self.cell_kind, p.view(f"dec{k}.W"), p.view(f"dec{k}.U"),
                                   p.view(f"dec{k}.b"), a)
            dec_caches.append(cache)
        Y = a @ p.view("out.W").T + p.view("out.b")
        return Y, (enc_out, enc_caches, a, dec_caches)

    def forward(self, windows: np.ndarray, params: Optional[ModelParams] = None) -> np.ndarray:
        X = np.asarray(windows, dtype=np.float64)
        single = X.ndim == 2
        Y, _ = self._forward((self.params if params is None else params), self._check(X))
        return Y[0] if single else Y

    def loss_and_grad(self, batch: Batch, params: Optional[ModelParams] = None) -> Tuple[float, ModelParams]:
        p = self.params if params is None else params
        X, target = _split_batch(batch)
        X = self._check(X)
        target = X if target is None else self._check(np.asarray(target, dtype=np.float64))
        Y, (enc_out, enc_caches, dec_top, dec_caches) = self._forward(p, X)
        diff = Y - target
        loss = float(np.mean(diff * diff))
        dY = 2.0 * diff / diff.size

        grads = p.zeros_like()
        grads.view("out.W")[...] = np.einsum("bto,bth->oh", dY, dec_top)
        grads.view("out.b")[...] = dY.sum(axis=(0, 1))
        da = dY @ p.view("out.W")
        for k in reversed(range(3)):
            da, dW, dU, db = rnn_backward(self.cell_kind, p.view(f"dec{k}.W"), p.view(f"dec{k}.U"),
                                          dec_caches[k], da)
            grads.view(f"dec{k}.W")[...] = dW
            grads.view(f"dec{k}.U")[...] = dU
            grads.view(f"dec{k}.b")[...] = db
        dz = da.sum(axis=1)
        da = np.zeros_like(enc_out)
        da[:, -1, :] = dz
        for k in reversed(range(3)):
            da, dW, dU, db = rnn_backward(self.cell_kind, p.view(f"enc{k}.W"), p.view(f"enc{k}.U"),
                                          enc_caches[k], da)
            grads.view(f"enc{k}.W")[...] = dW
            grads.view(f"enc{k}.U")[...] = dU
            grads.view(f"enc{k}.b")[...] = db
        return loss, grads

    def reconstruction_loss(self, windows: np.ndarray, params: Optional[ModelParams] = None) -> float:
        X = self._check(np.asarray(windows, dtype=np.float64))
        return mse_loss(self.forward(X, params), X)


class FrozenEncoderClassifier(_Model):
    """Autoencoder encoder (frozen) + tanh fully connected head + softmax."""

    frozen_prefixes = ("enc",)

    def __init__(self, hidden_sizes: Sequence[int] = (32, 16, 8), cell_kind: str = "gated",
                 head_sizes: Sequence[int] = (16,), n_classes: int = 2,
                 encoder: Optional[ModelParams] = None, n_channels: int = N_CHANNELS, **kwargs):
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.cell_kind = cell_kind
        self.head_sizes = tuple(int(h) for h in head_sizes)
        self.n_classes = n_classes
        self.n_channels = n_channels
        enc_blocks = SequenceAutoencoder.encoder_blocks(self.hidden_sizes, cell_kind, n_channels)
        head_blocks = []
        d_in = self.hidden_sizes[2]
        for k, h in enumerate(self.head_sizes):
            head_blocks += [(f"head{k}.W", (h, d_in), d_in), (f"head{k}.b", (h,), d_in)]
            d_in = h
        head_blocks += [("cls.W", (n_classes, d_in), d_in), ("cls.b", (n_classes,), d_in)]
        self.spec = ParamSpec(tuple(enc_blocks + head_blocks))
        self._encoder = SequenceAutoencoder.__new__(SequenceAutoencoder)
        self._encoder.hidden_sizes = self.hidden_sizes
        self._encoder.cell_kind = cell_kind
        self._encoder.n_channels = n_channels
        super().__init__(**kwargs)
        if encoder is not None:
            self.params = self.load_encoder(encoder)

    @classmethod
    def from_autoencoder(cls, autoencoder: SequenceAutoencoder, head_sizes: Sequence[int] = (16,),
                         n_classes: int = 2, **kwargs) -> "FrozenEncoderClassifier":
        return cls(autoencoder.hidden_sizes, autoencoder.cell_kind, head_sizes, n_classes,
                   encoder=autoencoder.params, n_channels=autoencoder.n_channels, **kwargs)

    def load_encoder(self, source: ModelParams) -> ModelParams:
        params = self.params.copy()
        for name in params.names():
            if name.startswith("enc"):
                if source.view(name).shape != params.view(name).shape:
                    raise LayoutMismatch(f"encoder block {name} has a different shape")
                params.view(name)[...] = source.view(name)
        return params

    def config(self) -> Dict:
        return {"kind": "classifier", "hidden_sizes": list(self.hidden_sizes), "cell_kind": self.cell_kind,
                "head_sizes": list(self.head_sizes), "n_classes": self.n_classes, "n_channels": self.n_channels}

    def embed(self, windows: np.ndarray, params: Optional[ModelParams] = None) -> np.ndarray:
        return self._encoder.embed(windows, (self.params if params is None else params))

    def head_forward(self, Z: np.ndarray, params: Optional[ModelParams] = None):
        p = self.params if params is None else params
        acts = [Z]
        a = Z
        for k in range(len(self.head_sizes)):
            a = np.tanh(a @ p.view(f"head{k}.W").T + p.view(f"head{k}.b"))
            acts.append(a)
        logits = a @ p.view("cls.W").T + p.view("cls.b")
        return softmax(logits), acts

    def head_loss_and_grad(self, Z: np.ndarray, labels: np.ndarray,
                           params: Optional[ModelParams] = None) -> Tuple[float, ModelParams]:
        """Loss and gradient on precomputed embeddings; encoder grads stay exactly zero."""
        p = self.params if params is None else params
        labels = np.asarray(labels, dtype=np.int64)
        probs, acts = self.head_forward(Z, p)
        B = Z.shape[0]
        with np.errstate(divide="ignore"):
            loss = float(-np.mean(np.log(probs[np.arange(B), labels])))
        dlogits = probs.copy()
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B
        grads = p.zeros_like()
        grads.view("cls.W")[...] = dlogits.T @ acts[-1]
        grads.view("cls.b")[...] = dlogits.sum(axis=0)
        da = dlogits @ p.view("cls.W")
        for k in reversed(range(len(self.head_sizes))):
            a = acts[k + 1]
            dpre = da * (1.0 - a * a)
            grads.view(f"head{k}.W")[...] = dpre.T @ acts[k]
            grads.view(f"head{k}.b")[...] = dpre.sum(axis=0)
            da = dpre @ p.view(f"head{k}.W")
        return loss, grads

    def loss_and_grad(self, batch: Batch, params: Optional[ModelParams] = None) -> Tuple[float, ModelParams]:
        X, labels = _split_batch(batch)
        if labels is None:
            raise ParameterValidationError("classifier batches need labels")
        p = self.params if params is None else params
        return self.head_loss_and_grad(self.embed(X, p), labels, p)

    def predict_proba(self, windows: np.ndarray, params: Optional[ModelParams] = None) -> np.ndarray:
        X = np.asarray(windows, dtype=np.float64)
        single = X.ndim == 2
        probs, _ = self.head_forward(self.embed(X, params), params)
        return probs[0] if single else probs

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(windows), axis=-1)


class DenseNet(_Model):
    """tanh hidden layers, linear output, mean squared error."""

    def __init__(self, sizes: Sequence[int], **kwargs):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ParameterValidationError("DenseNet needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        blocks = []
        for k in range(len(self.sizes) - 1):
            d_in, d_out = self.sizes[k], self.sizes[k + 1]
            blocks += [(f"dense{k}.W", (d_out, d_in), d_in), (f"dense{k}.b", (d_out,), d_in)]
        self.spec = ParamSpec(tuple(blocks))
        super().__init__(**kwargs)

    def config(self) -> Dict:
        return {"kind": "dense", "sizes": list(self.sizes)}

    def _forward(self, p: ModelParams, X: np.ndarray):
        acts = [X]
        a = X
        last = len(self.sizes) - 2
        for k in range(last + 1):
            a = a @ p.view(f"dense{k}.W").T + p.view(f"dense{k}.b")
            if k < last:
                a = np.tanh(a)
            acts.append(a)
        return a, acts

    def forward(self, X: np.ndarray, params: Optional[ModelParams] = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.sizes[0]:
            raise ShapeMismatch(f"expected {self.sizes[0]} inputs, got {X.shape[1]}")
        return self._forward((self.params if params is None else params), X)[0]

    def loss_and_grad(self, batch: Batch, params: Optional[ModelParams] = None) -> Tuple[float, ModelParams]:
        p = self.params if params is None else params
        X, Y = _split_batch(batch)
        if Y is None:
            raise ParameterValidationError("DenseNet batches need targets")
        X = np.atleast_2d(X)
        Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
        out, acts = self._forward(p, X)
        diff = out - Y
        loss = float(np.mean(diff * diff))
        da = 2.0 * diff / diff.size
        grads = p.zeros_like()
        last = len(self.sizes) - 2
        for k in reversed(range(last + 1)):
            if k < last:
                da = da * (1.0 - acts[k + 1] ** 2)
            grads.view(f"dense{k}.W")[...] = da.T @ acts[k]
            grads.view(f"dense{k}.b")[...] = da.sum(axis=0)
            da = da @ p.view(f"dense{k}.W")
        return loss, grads


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def forward_autoencoder(model: SequenceAutoencoder, window: np.ndarray) -> np.ndarray:
    return model.forward(window)


def backward(model: _Model, batch: Batch) -> ModelParams:
    """Gradient of the model's loss on ``batch``; frozen blocks are exactly zero."""
    X, _ = _split_batch(batch)
    if X.shape[0] == 0:
        raise ParameterValidationError("backward needs a nonempty batch")
    _, grads = model.loss_and_grad(batch)
    return grads


def minibatches(n: int, batch_size: Optional[int], rng: Optional[np.random.Generator]) -> List[np.ndarray]:
    """Full batch (no shuffle) when batch_size is None or >= n, else a seeded permutation."""
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def sgd_epoch(
    model: _Model,
    params: ModelParams,
    inputs: np.ndarray,
    targets: Optional[np.ndarray],
    lr: float,
    batch_size: Optional[int],
    rng: Optional[np.random.Generator],
    loss_and_grad: Optional[Callable] = None,
) -> Tuple[ModelParams, float]:
    """One pass of plain SGD; returns new params and the sample-weighted mean batch loss."""
    step = loss_and_grad or (lambda batch, p: model.loss_and_grad(batch, p))
    n = inputs.shape[0]
    total = 0.0
    for idx in minibatches(n, batch_size, rng):
        batch = (inputs[idx], None if targets is None else targets[idx])
        loss, grads = step(batch, params)
        params = sgd_step(params, grads, lr)
        total += loss * len(idx)
    return params, total / max(n, 1)


def grad_check(model: _Model, batch: Batch, eps: float = 1e-5, max_coords: int = 2000,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Only trainable coordinates are checked; at most ``max_coords`` of them are
    sampled (seeded) when the model is larger.
    """
    params = model.params
    _, grads = model.loss_and_grad(batch, params)
    candidates = np.flatnonzero(model.trainable_mask())
    if candidates.size > max_coords:
        candidates = np.sort(np.random.default_rng(seed).choice(candidates, size=max_coords, replace=False))
    worst = 0.0
    probe = params.copy()
    for i in candidates:
        original = probe.vector[i]
        probe.vector[i] = original + eps
        plus = model.loss(batch, probe)
        probe.vector[i] = original - eps
        minus = model.loss(batch, probe)
        probe.vector[i] = original
        numeric = (plus - minus) / (2.0 * eps)
        analytic = grads.vector[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, rel)
    logger.debug(f"grad_check over {candidates.size} coordinates: max relative error {worst:.3e}")
    return worst


def model_from_config(config: Dict, params: Optional[ModelParams] = None) -> _Model:
    """Rebuild a model from its ``config()`` dict (artifact loading)."""
    kind = config.get("kind")
    if kind == "autoencoder":
        return SequenceAutoencoder(config["hidden_sizes"], config["cell_kind"], config.get("n_channels", N_CHANNELS),
                                   params=params)
    if kind == "classifier":
        return FrozenEncoderClassifier(config["hidden_sizes"], config["cell_kind"], config["head_sizes"],
                                       config["n_classes"], n_channels=config.get("n_channels", N_CHANNELS),
                                       params=params)
    if kind == "dense":
        return DenseNet(config["sizes"], params=params)
    raise ArtifactError(f"unknown model kind {kind!r}")
