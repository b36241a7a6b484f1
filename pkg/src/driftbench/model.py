"""Toy dropout classifier with hand-written gradients.

A linear softmax model ``x -> W x + b`` by default, optionally with one ReLU
hidden layer. Dropout acts on the input features (and on the hidden units
when the hidden layer exists) with inverted scaling, so a maskless forward
pass is the deterministic eval path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng
from .errors import InvalidInputError, PoisonedUpdateError

LOGIT_CLAMP = 50.0
PROB_FLOOR = 1e-30
DEFAULT_DROPOUT = 0.1


@dataclass(frozen=True)
class ModelParams:
    """Layer weights ``(d_in, d_out)`` and biases ``(d_out,)``, input to output."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden(self) -> int:
        return self.weights[0].shape[1] if len(self.weights) > 1 else 0

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def unflat(self, vec: np.ndarray) -> "ModelParams":
        """Params of this shape filled from a flat vector (inverse of :meth:`flat`)."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise InvalidInputError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos : pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos : pos + b.size].copy())
            pos += b.size
        return ModelParams(tuple(weights), tuple(biases))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


def init_params(dim: int, n_classes: int, hidden: int = 0, seed: int = 0, scale: float = 0.01) -> ModelParams:
    key = rng.derive(seed, rng.SOURCE)
    sizes = [dim, hidden, n_classes] if hidden else [dim, n_classes]
    weights, biases, start = [], [], 0
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        # He-style scaling keeps the hidden ReLU layer alive
        std = np.sqrt(2.0 / d_in) if hidden and d_out == hidden else scale
        weights.append(std * rng.normal(key, d_in * d_out, start).reshape(d_in, d_out))
        start += d_in * d_out
        biases.append(np.zeros(d_out))
    return ModelParams(tuple(weights), tuple(biases))


@dataclass(frozen=True)
class DropoutMask:
    """Dropped units (True = dropped) for the input and hidden layer.

    Arrays are (units,) for one mask shared by a batch, or (n, units) for one
    mask per row; None leaves that layer untouched (no rescale either).
    :meth:`draw` drops units of the representation feeding the output layer:
    hidden units when there is a hidden layer, inputs otherwise.
    """

    input_dropped: np.ndarray | None
    hidden_dropped: np.ndarray | None = None
    rate: float = DEFAULT_DROPOUT

    @classmethod
    def draw(cls, seed: int, index: int, rate: float, dim: int, hidden: int = 0, rows: int | None = None):
        """Mask number ``index`` of the stream keyed by ``seed``."""
        if not 0.0 <= rate < 1.0:
            raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
        n = 1 if rows is None else rows
        per_draw = dim + hidden
        u = rng.uniform(seed, n * per_draw, start=index * per_draw).reshape(n, per_draw)
        dropped = u < rate
        inp, hid = (None, dropped[:, dim:]) if hidden else (dropped, None)
        if rows is None:
            inp = None if inp is None else inp[0]
            hid = None if hid is None else hid[0]
        return cls(inp, hid, rate)

    @classmethod
    def keep_all(cls, dim: int, hidden: int = 0):
        """Mask that drops nothing; forward with it equals the maskless pass."""
        return cls(np.zeros(dim, bool), np.zeros(hidden, bool) if hidden else None, 0.0)


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    logits: np.ndarray


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _apply_dropout(h: np.ndarray, dropped: np.ndarray | None, rate: float) -> tuple[np.ndarray, np.ndarray | float]:
    if dropped is None:
        return h, 1.0
    scale = np.where(dropped, 0.0, 1.0 / (1.0 - rate))
    return h * scale, scale


def _forward_cache(params: ModelParams, x: np.ndarray, mask: DropoutMask | None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.dim:
        raise InvalidInputError(f"input has {x.shape[-1]} features, model expects {params.dim}")
    cache = []
    h = x
    n_layers = len(params.weights)
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        if mask is not None:
            dropped = mask.input_dropped if layer == 0 else mask.hidden_dropped
            h, scale = _apply_dropout(h, dropped, mask.rate)
        else:
            scale = 1.0
        z = h @ w + b
        cache.append((h, scale))
        if layer < n_layers - 1:
            pre = z
            h = np.maximum(pre, 0.0)
            cache.append(pre)
    clamped = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return clamped, z, cache


def forward(params: ModelParams, x, mask: DropoutMask | None = None) -> Prediction:
    """Class probabilities for one sample ``(d,)`` or a batch ``(n, d)``."""
    logits, _, _ = _forward_cache(params, x, mask)
    return Prediction(probs=softmax(logits), logits=logits)


def features(params: ModelParams, x) -> np.ndarray:
    """Penultimate representation: raw input for the linear model, hidden ReLU otherwise."""
    x = np.asarray(x, dtype=np.float64)
    if len(params.weights) == 1:
        return x
    return np.maximum(x @ params.weights[0] + params.biases[0], 0.0)


def entropy(p) -> float | np.ndarray:
    """Shannon entropy in nats along the last axis; 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)


def cross_entropy(target, student) -> float | np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    return -np.sum(target * np.log(np.maximum(student, PROB_FLOOR)), axis=-1)


def _backward(params: ModelParams, raw_logits: np.ndarray, cache, dlogits: np.ndarray) -> ModelParams:
    # clamped logits have zero derivative
    dz = np.where(np.abs(raw_logits) < LOGIT_CLAMP, dlogits, 0.0)
    grads_w, grads_b = [], []
    n_layers = len(params.weights)
    pos = len(cache) - 1
    for layer in range(n_layers - 1, -1, -1):
        h, scale = cache[pos]
        dz2 = dz if dz.ndim == 2 else dz[None]
        h2 = h if h.ndim == 2 else np.broadcast_to(h, (dz2.shape[0], h.shape[-1]))
        grads_w.append(h2.T @ dz2)
        grads_b.append(dz2.sum(axis=0))
        if layer > 0:
            dh = (dz @ params.weights[layer].T) * scale
            pre = cache[pos - 1]
            dz = dh * (pre > 0)
            pos -= 2
    return ModelParams(tuple(reversed(grads_w)), tuple(reversed(grads_b)))


def grad(params: ModelParams, x, target, mask: DropoutMask | None = None) -> ModelParams:
    """Gradient of the mean cross-entropy ``CE(target, forward(params, x, mask))``."""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    logits, raw, cache = _forward_cache(params, x, mask)
    p = softmax(logits)
    n = logits.shape[0] if logits.ndim == 2 else 1
    # d CE / d z = p * sum(t) - t, which is p - t for a normalised target
    dlogits = (p * target.sum(axis=-1, keepdims=True) - target) / n
    return _backward(params, raw, cache, dlogits)


def entropy_grad(params: ModelParams, x, mask: DropoutMask | None = None) -> ModelParams:
    """Gradient of the mean prediction entropy (the entropy-minimisation baseline)."""
    x = np.asarray(x, dtype=np.float64)
    logits, raw, cache = _forward_cache(params, x, mask)
    p = softmax(logits)
    logp = np.log(np.maximum(p, PROB_FLOOR))
    h = -(p * logp).sum(axis=-1, keepdims=True)
    n = logits.shape[0] if logits.ndim == 2 else 1
    dlogits = -p * (logp + h) / n
    return _backward(params, raw, cache, dlogits)


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer kind {self.kind!r}")

    def copy(self) -> "OptimizerState":
        return replace(
            self,
            m=None if self.m is None else self.m.copy(),
            v=None if self.v is None else self.v.copy(),
        )


def optimizer_step(params: ModelParams, gradient: ModelParams, state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    """One SGD or AdamW step. Returns new params and a new state; inputs are untouched."""
    g = gradient.flat()
    if g.shape != (params.size,):
        raise InvalidInputError("gradient shape does not match params")
    if not np.all(np.isfinite(g)):
        raise PoisonedUpdateError("non-finite gradient")
    p = params.flat()
    new = state.copy()
    if state.kind == "sgd":
        p = p - state.lr * g
    else:
        if new.m is None:
            new.m = np.zeros_like(p)
            new.v = np.zeros_like(p)
        new.step += 1
        new.m = state.beta1 * new.m + (1.0 - state.beta1) * g
        new.v = state.beta2 * new.v + (1.0 - state.beta2) * g * g
        m_hat = new.m / (1.0 - state.beta1**new.step)
        v_hat = new.v / (1.0 - state.beta2**new.step)
        if state.weight_decay:
            p = p - state.lr * state.weight_decay * p
        p = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(p)):
        raise PoisonedUpdateError("update produced non-finite parameters")
    return params.unflat(p), new


# checkpoint: 16-byte header (8-byte magic, then uint16 dim, hidden, classes,
# reserved) followed by flat() as little-endian float64
_MAGIC = b"DBPARAM1"


def save_params(params: ModelParams, path) -> None:
    if len(params.weights) > 2:
        raise InvalidInputError("checkpoint format stores at most one hidden layer")
    header = _MAGIC + struct.pack("<HHHH", params.dim, params.hidden, params.n_classes, 0)
    Path(path).write_bytes(header + params.flat().astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != _MAGIC:
        raise InvalidInputError("not a parameter checkpoint (bad magic)")
    dim, hidden, n_classes, _ = struct.unpack("<HHHH", raw[8:16])
    dims = [dim, hidden, n_classes] if hidden else [dim, n_classes]
    template = ModelParams(
        tuple(np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])),
        tuple(np.zeros(b) for b in dims[1:]),
    )
    payload = np.frombuffer(raw[16:], dtype="<f8")
    return template.unflat(payload.astype(np.float64))


def fit_source(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    hidden: int = 0,
    seed: int = 0,
    epochs: int = 200,
    lr: float = 0.5,
) -> ModelParams:
    """Train the source model by full-batch gradient descent on labelled source data.

    Source labels are only ever seen here, before any test-time stream exists.
    """
    params = init_params(x.shape[1], n_classes, hidden=hidden, seed=seed)
    onehot = np.eye(n_classes)[np.asarray(y, dtype=np.int64)]
    state = OptimizerState(kind="sgd", lr=lr)
    for _ in range(epochs):
        params, state = optimizer_step(params, grad(params, x, onehot), state)
    return params


__all__ = [
    "DropoutMask",
    "ModelParams",
    "OptimizerState",
    "Prediction",
    "cross_entropy",
    "entropy",
    "entropy_grad",
    "features",
    "fit_source",
    "forward",
    "grad",
    "init_params",
    "load_params",
    "optimizer_step",
    "save_params",
    "softmax",
]
