"""Dense network engine: forward, analytic backward, losses and SGD.

Batches are row vectors, so a layer computes ``x @ W + b`` with ``W`` of
shape ``(n_in, n_out)``. Everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError

KL_FLOOR = 1e-12


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = _as_matrix(self.weights)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> DenseLayer:
        return DenseLayer(self.weights.copy(), self.bias.copy())


@dataclass
class DenseNet:
    """ReLU on every hidden layer, identity on the output layer."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for i, (lo, hi) in enumerate(zip(self.layers, self.layers[1:])):
            if lo.n_out != hi.n_in:
                raise ShapeError(
                    f"layer {i} outputs {lo.n_out} but layer {i + 1} expects {hi.n_in}"
                )

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> DenseNet:
        """Glorot-uniform weights, zero biases.

        ``sizes`` lists widths from input to output, e.g. ``[16, 32, 32, 10]``.
        """
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ShapeError(f"invalid layer sizes {sizes}")
        layers = []
        for n_in, n_out in zip(sizes, sizes[1:]):
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
            layers.append(DenseLayer(w, np.zeros(n_out)))
        return cls(layers)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def hosted_index(self) -> int:
        """Index of the layer just before the output layer."""
        if len(self.layers) < 2:
            raise ShapeError("a single-layer network has no penultimate layer")
        idx = len(self.layers) - 2
        w = self.layers[idx].weights
        if w.shape[0] != w.shape[1]:
            raise ShapeError(f"penultimate layer must be square, got {w.shape}")
        return idx

    def copy(self) -> DenseNet:
        return DenseNet([layer.copy() for layer in self.layers])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ShapeError(f"expected {2 * len(self.layers)} arrays, got {len(params)}")
        for layer, w, b in zip(self.layers, params[::2], params[1::2]):
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeError(
                    f"parameter shapes {w.shape}/{b.shape} do not match "
                    f"{layer.weights.shape}/{layer.bias.shape}"
                )
            layer.weights = np.asarray(w, dtype=np.float64)
            layer.bias = np.asarray(b, dtype=np.float64)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    shapes: list[tuple[int, int]]


def forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardCache]:
    x = _as_matrix(x)
    if x.shape[1] != net.layers[0].n_in:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {net.layers[0].n_in}")
    inputs, pre = [], []
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        z = h @ layer.weights + layer.bias
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, ForwardCache(inputs, pre, [layer.weights.shape for layer in net.layers])


def backward(net: DenseNet, cache: ForwardCache, grad_logits) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(grad_weights, grad_bias)``, ordered like ``net.layers``."""
    if cache.shapes != [layer.weights.shape for layer in net.layers]:
        raise RuntimeError("forward cache does not belong to this network")
    g = _as_matrix(grad_logits)
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"grad_logits {g.shape} does not match logits {cache.pre[-1].shape}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        if i != len(net.layers) - 1:
            g = g * (cache.pre[i] > 0.0)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        if i > 0:
            g = g @ net.layers[i].weights.T
    return grads


def softmax(logits) -> np.ndarray:
    z = _as_matrix(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = _as_matrix(logits)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Batch-mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = _as_matrix(logits)
    labels = np.asarray(labels)
    n, k = z.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        raise InputError(f"label {labels[bad[0]]} at index {bad[0]} outside [0, {k})")
    rows = np.arange(n)
    loss = -log_softmax(z)[rows, labels].mean()
    grad = softmax(z)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def kl_divergence(p, q) -> tuple[float, np.ndarray]:
    """Row-wise KL(p || q), averaged over the batch.

    The gradient is taken w.r.t. the logits that produced ``q`` (``q`` is a
    softmax output); ``p`` is held fixed and its rows must sum to one, which
    makes the gradient ``(q - p) / batch`` and exactly zero when ``p == q``.
    """
    p = _as_matrix(p)
    q = _as_matrix(q)
    if p.shape != q.shape:
        raise ShapeError(f"p {p.shape} and q {q.shape} differ")
    n = p.shape[0]
    log_q = np.log(np.maximum(q, KL_FLOOR))
    mask = p > 0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * (np.log(p[mask]) - log_q[mask])
    loss = terms.sum() / n
    grad = (q - p) / n
    return float(loss), grad


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    def copy(self) -> SgdState:
        return SgdState(self.learning_rate, self.momentum, [v.copy() for v in self.velocity])


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: SgdState) -> list[np.ndarray]:
    """Return updated parameters; momentum buffers in ``state`` advance in place.

    Heavy-ball form: ``v <- mu * v + g``, ``p <- p - lr * v``.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter {np.shape(p)} vs gradient {np.shape(g)}")
    lr = state.learning_rate
    if state.momentum == 0.0:
        return [p - lr * g for p, g in zip(params, grads)]
    if not state.velocity:
        state.velocity = [np.zeros_like(p, dtype=np.float64) for p in params]
    elif [v.shape for v in state.velocity] != [np.shape(p) for p in params]:
        raise ShapeError("momentum buffers do not match parameter shapes")
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.velocity[i] = state.momentum * state.velocity[i] + g
        out.append(p - lr * state.velocity[i])
    return out


def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    out = []
    for gw, gb in grads:
        out.extend([gw, gb])
    return out


def predict(net: DenseNet, x) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    logits, _ = forward(net, x)
    return np.argmax(logits, axis=1)
