"""Dense feed-forward classifier with hand-written backpropagation.

Hidden layers use ReLU, the output layer is softmax, and the loss is the
cross-entropy ``-log p[y]``. Everything runs in float64.

Gradients are plain lists of arrays laid out like ``net.params()``:
``[W0, b0, W1, b1, ...]`` with ``W`` shaped ``(out, in)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHECKPOINT_SCHEMA = 1


class DimensionMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"  # or "softmax" on the output layer


@dataclass
class DenseNetwork:
    layers: list[DenseLayer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[0] != b.weights.shape[1]:
                raise DimensionMismatch("consecutive layer dimensions do not chain")
        if self.layers[-1].activation != "softmax":
            raise ValueError("the last layer must be the softmax output")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].weights.shape[1]] + [l.weights.shape[0] for l in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weights, l.biases]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "DenseNetwork":
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatch("parameter count does not match the network")
        layers = []
        for i, l in enumerate(self.layers):
            W, b = params[2 * i], params[2 * i + 1]
            if W.shape != l.weights.shape or b.shape != l.biases.shape:
                raise ShapeMismatch(f"layer {i}: got {W.shape}/{b.shape}")
            layers.append(DenseLayer(W, b, l.activation))
        return DenseNetwork(layers)

    def copy(self) -> "DenseNetwork":
        return self.with_params([p.copy() for p in self.params()])


@dataclass
class Gradient:
    """Gradient arrays aligned with some model's ``params()``.

    ``class_id`` is set on per-sample gradients to the label that produced them.
    """

    arrays: list[np.ndarray]
    class_id: int | None = None

    def __add__(self, other: "Gradient") -> "Gradient":
        _check_compatible(self.arrays, other.arrays)
        return Gradient([a + b for a, b in zip(self.arrays, other.arrays)])

    def scaled(self, k: float) -> "Gradient":
        return Gradient([k * a for a in self.arrays], self.class_id)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "Gradient":
        return cls([np.zeros_like(p) for p in params])


PerSampleGradient = Gradient


def _check_compatible(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> None:
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ShapeMismatch("gradient shapes are not compatible")


def init_network(dims: Sequence[int], seed: int | np.random.SeedSequence) -> DenseNetwork:
    """Glorot-uniform weights, zero biases."""
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"bad layer dims {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-s, s, size=(fan_out, fan_in))
        act = "softmax" if i == len(dims) - 2 else "relu"
        layers.append(DenseLayer(W, np.zeros(fan_out), act))
    return DenseNetwork(layers)


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def log_softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=-1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=-1, keepdims=True))


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # input, each hidden output, then probs
    logits: np.ndarray = field(repr=False)

    @property
    def probs(self) -> np.ndarray:
        return self.activations[-1]


def forward_batch(net: DenseNetwork, X: np.ndarray) -> ForwardCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected (n, {net.input_dim}) input, got {X.shape}")
    acts = [X]
    A = X
    for l in net.layers[:-1]:
        A = np.maximum(A @ l.weights.T + l.biases, 0.0)
        acts.append(A)
    out = net.layers[-1]
    Z = A @ out.weights.T + out.biases
    acts.append(softmax(Z))
    return ForwardCache(acts, Z)


def forward(net: DenseNetwork, x: np.ndarray) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("forward takes a single feature vector")
    c = forward_batch(net, x[None, :])
    return ForwardCache([a[0] for a in c.activations], c.logits[0])


def backprop(net: DenseNetwork, cache: ForwardCache, dlogits: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Push ``dLoss/dlogits`` (n, K) back through the net.

    Returns the parameter gradient summed over rows and ``dLoss/dX``.
    """
    acts = cache.activations
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    dZ = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        A_prev = acts[i]
        grads[2 * i] = dZ.T @ A_prev
        grads[2 * i + 1] = dZ.sum(axis=0)
        dA = dZ @ net.layers[i].weights
        if i > 0:
            dZ = dA * (acts[i] > 0)
    return grads, dA


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _check_labels(y: np.ndarray, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return y


def weighted_gradient(
    net: DenseNetwork, X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, Gradient]:
    """Return ``sum_i w_i * loss_i`` and its gradient, in one batched pass."""
    y = _check_labels(y, net.output_dim)
    cache = forward_batch(net, X)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    dZ = w[:, None] * (cache.probs - _one_hot(y, net.output_dim))
    grads, _ = backprop(net, cache, dZ)
    ce = -log_softmax(cache.logits)[np.arange(len(y)), y]
    return float(w @ ce), Gradient(grads)


def loss(net: DenseNetwork, x: np.ndarray, y: int) -> float:
    y = int(_check_labels(np.array([y]), net.output_dim)[0])
    return float(-log_softmax(forward(net, x).logits)[y])


def batch_loss(net: DenseNetwork, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = _check_labels(y, net.output_dim)
    return -log_softmax(forward_batch(net, X).logits)[np.arange(len(y)), y]


def backward(net: DenseNetwork, x: np.ndarray, y: int) -> PerSampleGradient:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise DimensionMismatch(f"expected input of length {net.input_dim}")
    y = int(_check_labels(np.array([y]), net.output_dim)[0])
    _, g = weighted_gradient(net, x[None, :], np.array([y]))
    g.class_id = y
    return g


def finite_difference_gradient(net: DenseNetwork, x: np.ndarray, y: int, eps: float = 1e-4) -> PerSampleGradient:
    """Central differences of the loss, one parameter at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = [p.copy() for p in net.params()]
    out = []
    for pi, p in enumerate(base):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            lp = loss(net.with_params(base), x, y)
            p[idx] = orig - eps
            lm = loss(net.with_params(base), x, y)
            p[idx] = orig
            g[idx] = (lp - lm) / (2 * eps)
        out.append(g)
    return Gradient(out, int(y))


def sum_gradients(grads: Sequence[Gradient], params: Sequence[np.ndarray]) -> Gradient:
    if not grads:
        raise ValueError("need at least one gradient")
    total = [np.zeros_like(p) for p in params]
    for g in grads:
        _check_compatible(total, g.arrays)
        for t, a in zip(total, g.arrays):
            t += a
    return Gradient(total)


def apply_update(model, grad: Gradient, eta: float):
    """theta <- theta - eta * grad, returning a new model object."""
    params = model.params()
    _check_compatible(params, grad.arrays)
    return model.with_params([p - eta * g for p, g in zip(params, grad.arrays)])


def sgd_step(model, grads: Sequence[Gradient], eta: float):
    """Vanilla update: step along the plain sum of per-sample gradients."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return apply_update(model, sum_gradients(grads, model.params()), eta)


@dataclass
class TrainConfig:
    eta: float = 0.05
    epochs: int = 50
    seed: int = 0
    batch_size: int | None = None  # None = full batch

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")


def train_weighted(
    net: DenseNetwork,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    sample_weights: np.ndarray | None = None,
) -> tuple[DenseNetwork, list[float]]:
    """Gradient descent on the weighted loss; returns the net and per-epoch mean CE.

    With unit weights each step follows the plain sum of per-sample gradients.
    """
    n = len(y)
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        for b in batches:
            _, g = weighted_gradient(net, X[b], y[b], w[b])
            net = apply_update(net, g, cfg.eta)
        history.append(float(batch_loss(net, X, y).mean()))
    return net, history


def predict(net: DenseNetwork, X: np.ndarray) -> np.ndarray:
    return forward_batch(net, X).probs.argmax(axis=1)


def network_to_json(net: DenseNetwork, **extra) -> dict:
    return {
        "schema_version": CHECKPOINT_SCHEMA,
        "dims": net.dims,
        "activations": [l.activation for l in net.layers],
        "weights": [l.weights.tolist() for l in net.layers],
        "biases": [l.biases.tolist() for l in net.layers],
        **extra,
    }


def network_from_json(obj: dict) -> DenseNetwork:
    if obj["schema_version"] != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {obj['schema_version']}")
    layers = [
        DenseLayer(np.array(W, dtype=np.float64), np.array(b, dtype=np.float64), a)
        for W, b, a in zip(obj["weights"], obj["biases"], obj["activations"])
    ]
    net = DenseNetwork(layers)
    if net.dims != list(obj["dims"]):
        raise DimensionMismatch("checkpoint dims disagree with its weight arrays")
    return net


def save_network(net: DenseNetwork, path, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_json(net, **extra), fh)


def load_network(path) -> DenseNetwork:
    with open(path) as fh:
        return network_from_json(json.load(fh))
