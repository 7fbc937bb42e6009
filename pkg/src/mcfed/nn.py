"""Minimal dense network with flat parameters and analytic gradients.

Every model is a softmax-output MLP whose weights and biases live in a
single float64 vector, so server-side averaging and parameter-space
distances are plain vector arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelArch:
    """Layer sizes (input dim, hidden dims..., class count) and hidden activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes: need at least input and output dims")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes: every size must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation: expected one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        pairs = zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in pairs)


@dataclass(frozen=True)
class ModelParams:
    """Immutable flat vector of all trainable weights of one model."""

    values: np.ndarray
    arch: ModelArch

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if values.shape[0] != self.arch.n_params:
            raise ValueError(
                f"values: expected {self.arch.n_params} parameters for layers "
                f"{self.arch.layer_sizes}, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("values: model parameters must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values, self.arch)


@dataclass(frozen=True)
class Batch:
    """Labeled samples: inputs (n, d) and integer labels (n,).

    n may be zero so an empty test split stays representable; operations
    that need data check for themselves.
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        if inputs.ndim != 2:
            raise ValueError(f"inputs: expected 2-d matrix, got shape {inputs.shape}")
        if labels.shape[0] != inputs.shape[0]:
            raise ValueError(
                f"labels: {labels.shape[0]} labels for {inputs.shape[0]} inputs"
            )
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def _layer_views(values: np.ndarray, arch: ModelArch):
    """Split a flat vector into per-layer (weight matrix, bias vector) views."""
    views = []
    off = 0
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        w = values[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = values[off : off + fan_out]
        off += fan_out
        views.append((w, b))
    return views


def init_model(arch: ModelArch, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        scale = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-scale, scale, fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelParams(np.concatenate(chunks), arch)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _forward_pass(model: ModelParams, inputs: np.ndarray):
    """Return (pre-activations per layer, activations per layer incl. input)."""
    layers = _layer_views(model.values, model.arch)
    acts = [inputs]
    pre = []
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(_activate(z, model.arch.activation) if i < last else z)
    return pre, acts


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Class-probability matrix for a batch of inputs (softmax rows)."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"inputs: expected shape (n, {model.arch.input_dim}), got {x.shape}"
        )
    pre, _ = _forward_pass(model, x)
    return _softmax(pre[-1])


def supervised_loss_grad(model: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient.

    Raises FloatingPointError rather than letting a non-finite value
    propagate silently.
    """
    if batch.n == 0:
        raise ValueError("batch: cannot compute a loss on an empty batch")
    if batch.dim != model.arch.input_dim:
        raise ValueError(
            f"batch: input dim {batch.dim} does not match model dim {model.arch.input_dim}"
        )
    arch = model.arch
    pre, acts = _forward_pass(model, batch.inputs)
    logits = pre[-1]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits in forward pass")

    n = batch.n
    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(denom[:, 0]) - shifted[rows, batch.labels]))

    delta = e / denom
    delta[rows, batch.labels] -= 1.0
    delta /= n

    layers = _layer_views(model.values, arch)
    grad = np.empty(model.values.shape[0])
    off = arch.n_params
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        fan_in, fan_out = w.shape
        off -= fan_out
        grad[off : off + fan_out] = delta.sum(axis=0)
        off -= fan_in * fan_out
        grad[off : off + fan_in * fan_out] = (acts[i].T @ delta).ravel()
        if i > 0:
            delta = delta @ w.T
            if arch.activation == "tanh":
                delta = delta * (1.0 - acts[i] ** 2)
            else:
                delta = delta * (pre[i - 1] > 0.0)

    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite loss or gradient")
    return loss, grad


def l2_sq_distance(a: ModelParams, b: ModelParams) -> float:
    """Squared Euclidean distance between two flat parameter vectors."""
    if a.values.shape != b.values.shape:
        raise ValueError(
            f"parameter lengths differ: {a.values.shape[0]} vs {b.values.shape[0]}"
        )
    d = a.values - b.values
    return float(np.sum(d * d))


def proximal_grad(model: ModelParams, center: ModelParams, lam: float, m: int) -> np.ndarray:
    """Gradient of the scaled center-distance penalty (lam / m) * ||W - center||^2."""
    if model.values.shape != center.values.shape:
        raise ValueError(
            f"parameter lengths differ: {model.values.shape[0]} vs {center.values.shape[0]}"
        )
    return (2.0 * lam / m) * (model.values - center.values)


def sgd_step(model: ModelParams, grad: np.ndarray, lr: float) -> ModelParams:
    """One plain gradient-descent step."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != model.values.shape:
        raise ValueError(
            f"gradient length {g.shape} does not match parameters {model.values.shape}"
        )
    return model.with_values(model.values - lr * g)
