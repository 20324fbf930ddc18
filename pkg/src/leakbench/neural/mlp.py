"""Fully connected network with a 5-way softmax or a scalar regression head."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SOFTMAX_5 = "softmax-5"
REGRESSION_1 = "regression-1"
HEADS = (SOFTMAX_5, REGRESSION_1)


@dataclass
class MlpModel:
    """Layer ``l`` maps ``sizes[l]`` to ``sizes[l + 1]`` as ``a @ W + b``.

    Hidden layers use a rectifier; the output layer is linear (the softmax is
    folded into the loss). ``dropout[l]`` applies to the output of hidden
    layer ``l`` during training only. ``lr_scales[l]`` multiplies the
    learning rate of layer ``l``.
    """

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str
    dropout: tuple[float, ...] = ()
    lr_scales: tuple[float, ...] = ()
    activations: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        n_layers = len(self.sizes) - 1
        if n_layers < 1:
            raise ValueError("an MLP needs at least one layer")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        expected_out = 5 if self.head == SOFTMAX_5 else 1
        if self.sizes[-1] != expected_out:
            raise ValueError(f"head {self.head} needs {expected_out} outputs")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("one weight matrix and bias per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[l], self.sizes[l + 1]) or b.shape != (self.sizes[l + 1],):
                raise ValueError(f"layer {l} has inconsistent dimensions")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite weights")
        if not self.dropout:
            self.dropout = (0.0,) * n_layers
        if not self.lr_scales:
            self.lr_scales = (1.0,) * n_layers
        if not self.activations:
            self.activations = ("relu",) * (n_layers - 1) + ("identity",)
        if len(self.dropout) != n_layers or len(self.lr_scales) != n_layers:
            raise ValueError("dropout and lr_scales need one entry per layer")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return self.sizes[1:-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def param_lr_scales(self) -> list[float]:
        return [s for s in self.lr_scales for _ in range(2)]

    def copy(self) -> "MlpModel":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_mlp(sizes, head: str, rng: np.random.Generator, dropout: float = 0.0, lr_scales=None) -> MlpModel:
    """Xavier-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    n_layers = len(sizes) - 1
    drop = tuple([float(dropout)] * (n_layers - 1) + [0.0])
    return MlpModel(sizes, weights, biases, head, drop, tuple(lr_scales or ()))


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == "relu" else z


def forward(model: MlpModel, x: np.ndarray, rng: np.random.Generator | None = None):
    """Forward pass. Dropout is active only when ``rng`` is given."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != model.sizes[0]:
        raise ValueError(f"expected input of width {model.sizes[0]}, got shape {a.shape}")
    cache = [a]
    masks = []
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = _act(model.activations[l], z)
        mask = None
        p = model.dropout[l]
        if rng is not None and p > 0.0 and l < model.n_layers - 1:
            mask = (rng.random(a.shape) >= p) / (1.0 - p)
            a = a * mask
        masks.append(mask)
        cache.append(a)
    return a, (cache, masks)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def head_loss(head: str, out: np.ndarray, y: np.ndarray):
    """Mean loss over the batch and its gradient with respect to ``out``."""
    n = out.shape[0]
    if head == SOFTMAX_5:
        y = np.asarray(y, dtype=np.int64)
        shifted = out - out.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
        grad = softmax(out)
        grad[np.arange(n), y] -= 1.0
        return loss, grad / n
    diff = out[:, 0] - np.asarray(y, dtype=np.float64)
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / n) * diff[:, None]


def backward(model: MlpModel, state, dout: np.ndarray) -> list[np.ndarray]:
    cache, masks = state
    grads: list[np.ndarray] = [None] * (2 * model.n_layers)  # type: ignore[list-item]
    delta = dout
    for l in range(model.n_layers - 1, -1, -1):
        a_out = cache[l + 1]
        if masks[l] is not None:
            delta = delta * masks[l]
        if model.activations[l] == "relu":
            delta = delta * (a_out > 0)
        grads[2 * l] = cache[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        delta = delta @ model.weights[l].T
    return grads


def loss_and_grad(model: MlpModel, x, y, rng=None):
    out, state = forward(model, x, rng)
    loss, dout = head_loss(model.head, out, y)
    return loss, backward(model, state, dout)


def predict(model: MlpModel, x) -> np.ndarray:
    """Class probabilities for a softmax head, scalar predictions otherwise."""
    out, _ = forward(model, x)
    return softmax(out) if model.head == SOFTMAX_5 else out[:, 0]


def hidden_activations(model: MlpModel, x) -> list[np.ndarray]:
    _, (cache, _) = forward(model, x)
    return cache[1:-1]
