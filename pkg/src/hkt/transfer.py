"""Horizontal transfer pipelines.

A pipeline fuses the source's penultimate weights ``W_a`` with the target's
``W_b`` through a learnable dense map: ``W* = [W_a | W_b] @ M + bias`` where
``M`` is ``2n x n``. ``W*`` then replaces the target's layer weights; the
target keeps its own layer bias.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError


@dataclass
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ConfigError(f"alpha + beta must equal 1, got {self.alpha + self.beta!r}")

    @classmethod
    def from_alpha(cls, alpha: float) -> LossWeights:
        return cls(alpha, 1.0 - alpha)


@dataclass
class TransferModel:
    m: np.ndarray
    bias: np.ndarray
    optimizer: nn.SgdState

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        rows, cols = self.m.shape
        if rows != 2 * cols or self.bias.shape != (cols,):
            raise ShapeError(f"transfer map {self.m.shape} with bias {self.bias.shape} is not 2n x n")

    @classmethod
    def selector(cls, n: int, learning_rate: float, momentum: float = 0.0) -> TransferModel:
        """``M = [0; I]``: the fused layer starts out equal to the target's own."""
        tm = cls(np.zeros((2 * n, n)), np.zeros(n), nn.SgdState(learning_rate, momentum))
        tm.reset()
        return tm

    @property
    def n(self) -> int:
        return self.m.shape[1]

    def reset(self) -> None:
        """Back to the selector map with fresh optimizer state."""
        n = self.n
        self.m = np.vstack([np.zeros((n, n)), np.eye(n)])
        self.bias = np.zeros(n)
        self.optimizer = nn.SgdState(self.optimizer.learning_rate, self.optimizer.momentum)


@dataclass
class Pipeline:
    source_id: int
    target_layer: int
    model: TransferModel


@dataclass(frozen=True)
class SourceSnapshot:
    """Frozen copy of a source model. Carries weights only, never samples."""

    agent_id: int
    net: nn.DenseNet

    @classmethod
    def take(cls, agent_id: int, net: nn.DenseNet) -> SourceSnapshot:
        return cls(agent_id, net.copy())

    @property
    def hosted_weights(self) -> np.ndarray:
        return self.net.layers[self.net.hosted_index].weights

    def logits(self, x) -> np.ndarray:
        return nn.forward(self.net, x)[0]

    def distribution(self, x) -> np.ndarray:
        return nn.softmax(self.logits(x))


class StepLosses(NamedTuple):
    loss1: float
    loss2: float
    combined: float
    l1: float


def concat_weights(w_a, w_b) -> np.ndarray:
    w_a = np.asarray(w_a, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    if w_a.ndim != 2 or w_a.shape[0] != w_a.shape[1] or w_a.shape != w_b.shape:
        raise ShapeError(f"need two equal square matrices, got {w_a.shape} and {w_b.shape}")
    return np.hstack([w_a, w_b])


def apply_transfer(tm: TransferModel, concat) -> np.ndarray:
    concat = np.asarray(concat, dtype=np.float64)
    if concat.shape != (tm.n, 2 * tm.n):
        raise ShapeError(f"concatenated weights {concat.shape}, transfer map expects {(tm.n, 2 * tm.n)}")
    return concat @ tm.m + tm.bias


def transfer_objective_l1(w_star, w_a, w_b, x, bias) -> float:
    """Mean absolute output gap of the fused layer against source and target.

    Diagnostic only; training optimizes ``combined_loss``.
    """
    w_star, w_a, w_b = (np.asarray(w, dtype=np.float64) for w in (w_star, w_a, w_b))
    if not (w_star.shape == w_a.shape == w_b.shape) or w_star.shape[0] != w_star.shape[1]:
        raise ShapeError(f"weights {w_star.shape}, {w_a.shape}, {w_b.shape} are not equal square")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w_star.shape[0]:
        raise ShapeError(f"inputs {x.shape} do not fit weights {w_star.shape}")
    out = x @ w_star + bias
    return float(np.abs(out - (x @ w_a + bias)).mean() + np.abs(out - (x @ w_b + bias)).mean())


def combined_loss(loss1: float, loss2: float, w: LossWeights) -> float:
    return (w.alpha * loss1 + w.beta * loss2) / 2.0


def _fused_loss(net, x, labels, teacher_probs, w, objective):
    logits, cache = nn.forward(net, x)
    q = nn.softmax(logits)
    loss1, g1 = nn.cross_entropy(logits, labels)
    loss2, g2 = 0.0, np.zeros_like(q)
    for p in teacher_probs:
        l, g = nn.kl_divergence(p, q)
        loss2 += l
        g2 += g
    loss2 /= len(teacher_probs)
    g2 /= len(teacher_probs)
    if objective == "combined":
        grad_logits = (w.alpha * g1 + w.beta * g2) / 2.0
    else:
        grad_logits = g2
    return loss1, loss2, cache, grad_logits


def pipeline_step(
    target,
    snapshot: SourceSnapshot,
    batch,
    w: LossWeights,
    teachers: Sequence[np.ndarray] | None = None,
    objective: str = "combined",
    base: np.ndarray | None = None,
) -> StepLosses:
    """One optimization step of the pipeline from ``snapshot`` into ``target``.

    ``target`` needs ``.model`` (a DenseNet) and ``.pipelines`` (source id ->
    Pipeline). ``teachers`` are the source output distributions on ``batch``
    whose mean KL forms the transfer term; defaults to this pipeline's source
    alone. ``objective="loss2"`` drops the cross-entropy term from the
    gradient. ``base`` replaces the target's current layer as the second
    half of the fused input (defaults to the current layer). Only the hosted
    layer's weights and the transfer map change.
    """
    if objective not in ("combined", "loss2"):
        raise ConfigError(f"unknown pipeline objective {objective!r}")
    pipe = target.pipelines.get(snapshot.agent_id)
    if pipe is None:
        raise ConfigError(f"agent has no pipeline from source {snapshot.agent_id}")
    x, labels = batch
    net = target.model
    idx = pipe.target_layer
    tm = pipe.model
    layer = net.layers[idx]
    w_a = snapshot.hosted_weights
    w_b = layer.weights if base is None else np.asarray(base, dtype=np.float64)
    if w_a.shape != layer.weights.shape or w_b.shape != layer.weights.shape:
        raise ShapeError(f"source layer {w_a.shape} does not match target layer {layer.weights.shape}")
    if teachers is None:
        teachers = [snapshot.distribution(x)]

    concat = concat_weights(w_a, w_b)
    layer.weights = apply_transfer(tm, concat)
    loss1, loss2, cache, grad_logits = _fused_loss(net, x, labels, teachers, w, objective)
    l1 = transfer_objective_l1(layer.weights, w_a, w_b, cache.inputs[idx], layer.bias)

    g_star = nn.backward(net, cache, grad_logits)[idx][0]
    grads = [concat.T @ g_star, g_star.sum(axis=0)]
    tm.m, tm.bias = nn.sgd_step([tm.m, tm.bias], grads, tm.optimizer)
    layer.weights = apply_transfer(tm, concat)
    return StepLosses(loss1, loss2, combined_loss(loss1, loss2, w), l1)
