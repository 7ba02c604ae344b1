"""Small fully-connected classifier with hand-written backpropagation.

Everything runs in float64 numpy. Models are treated as immutable values:
update functions return a new :class:`LayeredModel` and parameter arrays are
flagged read-only so accidental in-place edits fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyBatchError,
    InputShapeError,
    LabelError,
    NumericOverflowError,
)

CHECKPOINT_FORMAT = "unlearnbench.model"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu",)
LOSS_KINDS = ("task", "kl", "kl+task")


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass(frozen=True)
class LayeredModel:
    layers: tuple
    activation: str = "relu"
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for i, layer in enumerate(self.layers):
            if layer.weights.ndim != 2 or layer.bias.shape != (layer.weights.shape[0],):
                raise InputShapeError(f"layer {i}: weight/bias shapes disagree")
            if i and layer.weights.shape[1] != self.layers[i - 1].weights.shape[0]:
                raise InputShapeError(f"layer {i} input dim does not match layer {i - 1} output dim")
        if self.n_classes < 2:
            raise ConfigError("class count must be at least 2")

    @property
    def dims(self):
        return [self.layers[0].weights.shape[1]] + [l.weights.shape[0] for l in self.layers]

    @property
    def input_dim(self):
        return self.layers[0].weights.shape[1]

    @property
    def n_classes(self):
        return self.layers[-1].weights.shape[0]

    @property
    def n_layers(self):
        return len(self.layers)

    def parameters(self):
        """Flat list of parameter arrays: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def is_finite(self):
        return all(np.isfinite(p).all() for p in self.parameters())

    def equals(self, other):
        """Bitwise equality of every parameter array."""
        if self.dims != other.dims:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


@dataclass(frozen=True)
class LayerMask:
    trainable: tuple

    @classmethod
    def all(cls, n_layers):
        return cls((True,) * n_layers)

    @classmethod
    def last_k(cls, n_layers, k):
        if not 1 <= k <= n_layers:
            raise ConfigError(f"k must be in [1, {n_layers}], got {k}")
        return cls((False,) * (n_layers - k) + (True,) * k)

    def check(self, model):
        if len(self.trainable) != model.n_layers:
            raise ConfigError(f"mask has {len(self.trainable)} entries, model has {model.n_layers} layers")
        if not any(self.trainable):
            raise ConfigError("mask must leave at least one layer trainable")

    @property
    def first_trainable(self):
        return self.trainable.index(True)


@dataclass(frozen=True)
class GradientSet:
    weights: tuple
    biases: tuple
    batch_size: int
    trainable: tuple

    def flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def scaled(self, factor):
        return GradientSet(
            tuple(w * factor for w in self.weights),
            tuple(b * factor for b in self.biases),
            self.batch_size,
            self.trainable,
        )


def init_model(dims: Sequence[int], seed: int, activation: str = "relu") -> LayeredModel:
    """Glorot-uniform weights, zero biases. ``dims`` is ``[input, *hidden, classes]``."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"degenerate dims {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(_frozen(rng.uniform(-limit, limit, size=(fan_out, fan_in))), _frozen(np.zeros(fan_out))))
    return LayeredModel(tuple(layers), activation, seed)


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise InputShapeError(f"expected features of dim {model.input_dim}, got shape {x.shape}")
    return x, single


def _forward_cache(model, X):
    """Returns (layer inputs, final logits). ``inputs[i]`` feeds layer i."""
    inputs = [X]
    h = X
    last = model.n_layers - 1
    for i, layer in enumerate(model.layers):
        z = h @ layer.weights.T + layer.bias
        if i < last:
            h = np.maximum(z, 0.0)
            inputs.append(h)
        else:
            h = z
    return inputs, h


def forward(model: LayeredModel, x) -> np.ndarray:
    """Raw class scores for one feature vector or a (n, d) batch."""
    X, single = _as_batch(model, x)
    _, logits = _forward_cache(model, X)
    return logits[0] if single else logits


def predict(model, X):
    return np.argmax(forward(model, X), axis=-1)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits, label) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    label = int(_check_labels([label], logits.shape[-1])[0])
    return float(-log_softmax(logits)[label])


def per_sample_cross_entropy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[-1])
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def kl_divergence(p_logits, q_logits) -> float:
    """KL(softmax(p) || softmax(q))."""
    p_logits = np.asarray(p_logits, dtype=np.float64)
    q_logits = np.asarray(q_logits, dtype=np.float64)
    if p_logits.shape != q_logits.shape:
        raise InputShapeError(f"logit shapes differ: {p_logits.shape} vs {q_logits.shape}")
    return float(per_sample_kl(p_logits[None], q_logits[None])[0])


def per_sample_kl(p_logits, q_logits):
    log_p = log_softmax(p_logits)
    log_q = log_softmax(q_logits)
    # clip tiny negative round-off
    return np.maximum((np.exp(log_p) * (log_p - log_q)).sum(axis=-1), 0.0)


def entropy(logits):
    log_p = log_softmax(logits)
    return -(np.exp(log_p) * log_p).sum(axis=-1)


def _logit_gradient(logits, labels, loss, teacher_logits):
    """d(per-sample loss)/d(logits), un-averaged."""
    n = logits.shape[0]
    g = np.zeros_like(logits)
    if loss in ("task", "kl+task"):
        g += softmax(logits)
        g[np.arange(n), labels] -= 1.0
    if loss in ("kl", "kl+task"):
        if teacher_logits is None:
            raise ConfigError(f"loss kind {loss!r} needs teacher logits")
        teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
        if teacher_logits.shape != logits.shape:
            raise InputShapeError("teacher logits must match student logits in shape")
        log_p = log_softmax(logits)
        p = np.exp(log_p)
        diff = log_p - log_softmax(teacher_logits)
        kl = (p * diff).sum(axis=1, keepdims=True)
        g += p * (diff - kl)
    return g


def batch_loss(model, X, y=None, loss="task", teacher_logits=None):
    """Mean loss of ``model`` over a batch, same objective as :func:`backward`."""
    logits = forward(model, X)
    total = np.zeros(len(logits))
    if loss in ("task", "kl+task"):
        total += per_sample_cross_entropy(logits, y)
    if loss in ("kl", "kl+task"):
        total += per_sample_kl(logits, teacher_logits)
    return float(total.mean())


def backward(model, X, y=None, loss="task", mask=None, teacher_logits=None, return_input_grad=False):
    """Mean gradient of the batch loss w.r.t. every parameter.

    ``loss`` is ``"task"`` (cross-entropy), ``"kl"`` (KL(student || teacher))
    or ``"kl+task"``. Layers switched off in ``mask`` receive zero gradients
    and backpropagation stops below the lowest trainable layer.
    """
    if loss not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {loss!r}")
    X, _ = _as_batch(model, X)
    n = X.shape[0]
    if n == 0:
        raise EmptyBatchError("backward needs at least one sample")
    mask = LayerMask.all(model.n_layers) if mask is None else mask
    mask.check(model)
    labels = _check_labels(y, model.n_classes) if loss != "kl" else None

    inputs, logits = _forward_cache(model, X)
    delta = _logit_gradient(logits, labels, loss, teacher_logits) / n

    L = model.n_layers
    stop = 0 if return_input_grad else mask.first_trainable
    gw = [None] * L
    gb = [None] * L
    dx = None
    for i in range(L - 1, stop - 1, -1):
        layer = model.layers[i]
        if mask.trainable[i]:
            gw[i] = delta.T @ inputs[i]
            gb[i] = delta.sum(axis=0)
        if i > 0 and i > stop:
            delta = (delta @ layer.weights) * (inputs[i] > 0)
        elif i == 0 and return_input_grad:
            dx = delta @ layer.weights
    for i, layer in enumerate(model.layers):
        if gw[i] is None:
            gw[i] = np.zeros_like(layer.weights)
            gb[i] = np.zeros_like(layer.bias)
    grads = GradientSet(tuple(gw), tuple(gb), n, mask.trainable)
    if return_input_grad:
        # per-sample input gradients are undone from the batch mean
        return grads, dx * n
    return grads


def input_gradient(model, x, label):
    """d cross_entropy(forward(model, x), label) / dx for a single vector."""
    X, _ = _as_batch(model, x)
    _, dx = backward(model, X, [label], "task", return_input_grad=True)
    return dx[0]


def apply_step(model, grads, lr, direction="descent", context=None):
    """One plain SGD step. ``direction="ascent"`` moves up the gradient."""
    if lr < 0 or not np.isfinite(lr):
        raise ConfigError(f"learning rate must be a finite non-negative number, got {lr}")
    if direction not in ("descent", "ascent"):
        raise ConfigError(f"unknown direction {direction!r}")
    if len(grads.weights) != model.n_layers:
        raise InputShapeError("gradient set does not match model")
    sign = -1.0 if direction == "descent" else 1.0
    layers = []
    for i, layer in enumerate(model.layers):
        if not grads.trainable[i]:
            layers.append(layer)
            continue
        gw, gb = grads.weights[i], grads.biases[i]
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise InputShapeError(f"gradient block {i} shape mismatch")
        with np.errstate(over="ignore", invalid="ignore"):
            w = layer.weights + sign * lr * gw
            b = layer.bias + sign * lr * gb
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NumericOverflowError(f"non-finite parameters in layer {i} after {direction} step", context)
        layers.append(Layer(_frozen(w), _frozen(b)))
    return LayeredModel(tuple(layers), model.activation, model.seed)


def step_cost(model, n_samples, mask=None):
    """Multiply-add count of one forward+backward pass, used by work clocks."""
    mask = LayerMask.all(model.n_layers) if mask is None else mask
    fwd = sum(l.weights.size for l in model.layers)
    first = mask.first_trainable
    # weight-gradient products for trainable layers, delta propagation above them
    bwd = sum(l.weights.size for l in model.layers[first:])
    bwd += sum(l.weights.size for l in model.layers[first + 1:])
    return n_samples * (fwd + bwd)


def forward_cost(model, n_samples):
    return n_samples * sum(l.weights.size for l in model.layers)


def model_to_dict(model):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": model.dims,
        "activation": model.activation,
        "seed": model.seed,
        "layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist()} for l in model.layers],
    }


def model_from_dict(data):
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not a model checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {data.get('version')}")
    layers = tuple(Layer(_frozen(l["weights"]), _frozen(l["bias"])) for l in data["layers"])
    model = LayeredModel(layers, data["activation"], data["seed"])
    if model.dims != list(data["dims"]):
        raise InputShapeError("checkpoint dims disagree with its layers")
    return model


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
