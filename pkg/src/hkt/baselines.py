"""Comparison methods: real-time logit distillation, federated averaging and
randomized pairwise gossip averaging (labelled ``gossip-avg``; no ADMM duals).
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .data import Dataset, batches
from .errors import ConfigError
from .metrics import ConfusionMatrix, MetricsRecord
from .sim import (
    Agent, MeshTopology, MessageLog, RunResult, Schedule, evaluate_all, local_epoch,
)
from .transfer import SourceSnapshot

HUB = -1


@dataclass
class KdConfig:
    lam: float = 1.0
    distance: str = "mse"

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"kd lambda must be finite and >= 0, got {self.lam}")
        if self.distance not in ("mse", "l1"):
            raise ConfigError(f"unknown logit distance {self.distance!r}")


@dataclass
class FedConfig:
    rounds: int = 25
    local_epochs_per_round: int = 1
    weighted: bool = False

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs_per_round < 1:
            raise ConfigError("rounds and local_epochs_per_round must be >= 1")


@dataclass
class GossipConfig:
    rounds: int
    mixing_weight: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("gossip needs at least one round")
        if not 0.0 < self.mixing_weight <= 1.0:
            raise ConfigError(f"mixing_weight {self.mixing_weight} outside (0, 1]")


def logit_distance(target_logits, source_logits, distance: str = "mse") -> tuple[float, np.ndarray]:
    """Mean elementwise distance and its gradient w.r.t. ``target_logits``."""
    diff = np.asarray(target_logits) - np.asarray(source_logits)
    if distance == "mse":
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def kd_loss(net: nn.DenseNet, sources: Sequence[SourceSnapshot], batch, cfg: KdConfig):
    """Cross-entropy plus ``lam`` times the source-averaged logit distance.

    Returns ``(loss, cache, grad_logits)``.
    """
    x, labels = batch
    logits, cache = nn.forward(net, x)
    loss, grad = nn.cross_entropy(logits, labels)
    if cfg.lam == 0.0:
        return loss, cache, grad
    dist, dgrad = 0.0, np.zeros_like(logits)
    for s in sources:
        d, g = logit_distance(logits, s.logits(x), cfg.distance)
        dist += d
        dgrad += g
    n = len(sources)
    return loss + cfg.lam * dist / n, cache, grad + cfg.lam * dgrad / n


def kd_step(target: Agent, sources: Sequence[SourceSnapshot], batch, cfg: KdConfig) -> float:
    if not sources:
        raise ConfigError(f"agent {target.id}: distillation needs at least one source")
    loss, cache, grad = kd_loss(target.model, sources, batch, cfg)
    grads = nn.flatten_grads(nn.backward(target.model, cache, grad))
    target.model.set_parameters(nn.sgd_step(target.model.parameters(), grads, target.optimizer))
    return loss


def average_parameters(nets: Sequence[nn.DenseNet], weights: Sequence[float] | None = None) -> list[np.ndarray]:
    """Elementwise (weighted) mean, computed as a shift from the first net so
    that identical inputs come back bit-identical.
    """
    base = nets[0].parameters()
    if weights is None:
        weights = [1.0 / len(nets)] * len(nets)
    else:
        total = float(sum(weights))
        weights = [w / total for w in weights]
    out = []
    for i, p0 in enumerate(base):
        delta = np.zeros_like(p0)
        for w, net in zip(weights, nets):
            delta += w * (net.parameters()[i] - p0)
        out.append(p0 + delta)
    return out


def _check_same_architecture(agents: Sequence[Agent]) -> None:
    sizes = {tuple(a.model.sizes) for a in agents}
    if len(sizes) != 1:
        raise ConfigError(f"federated averaging needs one architecture, got {sorted(sizes)}")


def fedavg_round(agents: Sequence[Agent], cfg: FedConfig, rnd: int, batch_size: int,
                 messages: MessageLog | None = None) -> list[float]:
    """Local epochs on every agent, then broadcast of the parameter mean."""
    _check_same_architecture(agents)
    losses = []
    for a in agents:
        ls = [local_epoch(a, (rnd - 1) * cfg.local_epochs_per_round + k + 1, batch_size)
              for k in range(cfg.local_epochs_per_round)]
        losses.append(float(np.mean(ls)))
    weights = [len(a.partition) for a in agents] if cfg.weighted else None
    avg = average_parameters([a.model for a in agents], weights)
    for a in agents:
        a.model.set_parameters([p.copy() for p in avg])
        if messages is not None:
            messages.record(a.id, HUB, rnd)
            messages.record(HUB, a.id, rnd)
    return losses


def mix_pair(u: nn.DenseNet, v: nn.DenseNet, mixing_weight: float) -> None:
    """``self <- (1 - mu/2) self + (mu/2) other`` for both ends at once."""
    keep, take = 1.0 - mixing_weight / 2.0, mixing_weight / 2.0
    pu, pv = u.parameters(), v.parameters()
    u.set_parameters([keep * a + take * b for a, b in zip(pu, pv)])
    v.set_parameters([keep * b + take * a for a, b in zip(pu, pv)])


def gossip_round(agents: Sequence[Agent], topology: MeshTopology, cfg: GossipConfig, rnd: int,
                 batch_size: int, messages: MessageLog | None = None) -> tuple[list[float], tuple[int, int]]:
    pairs = topology.undirected_pairs()
    if not pairs:
        raise ConfigError("gossip averaging needs a topology with at least one edge")
    losses = [local_epoch(a, rnd, batch_size) for a in agents]
    u, v = pairs[int(cfg.rng.integers(len(pairs)))]
    by_id = {a.id: a for a in agents}
    mix_pair(by_id[u].model, by_id[v].model, cfg.mixing_weight)
    if messages is not None:
        messages.record(u, v, rnd)
        messages.record(v, u, rnd)
    return losses, (u, v)


def run_kd(agents: Sequence[Agent], topology: MeshTopology, schedule: Schedule, test: Dataset,
           cfg: KdConfig, batch_size: int, train_sources: bool = True, timing: bool = False) -> RunResult:
    """A local epoch for everyone, then a distillation epoch for agents with
    in-edges (per batch in ``batch_interleaved`` mode)."""
    agents = sorted(agents, key=lambda a: a.id)
    messages = MessageLog()
    confusions: dict[int, ConfusionMatrix] = {}
    records: list[MetricsRecord] = []
    started = time.perf_counter()
    for epoch in range(1, schedule.total_epochs + 1):
        losses = {}
        snaps = None
        if schedule.mode == "epoch_interleaved":
            for a in agents:
                if train_sources or topology.sources_of(a.id):
                    losses[a.id] = (local_epoch(a, epoch, batch_size), 0.0)
        snaps = {a.id: a.snapshot() for a in agents}
        for a in agents:
            srcs = [snaps[s] for s in topology.sources_of(a.id)]
            if not srcs:
                if schedule.mode == "batch_interleaved" and train_sources:
                    losses[a.id] = (local_epoch(a, epoch, batch_size), 0.0)
                continue
            for s in srcs:
                messages.record(s.agent_id, a.id, epoch)
            phase = "transfer" if schedule.mode == "epoch_interleaved" else "local"
            ls = [kd_step(a, srcs, b, cfg) for b in batches(a.partition, batch_size, a.epoch_seed(epoch, phase))]
            prev = losses.get(a.id, (float(np.mean(ls)), 0.0))[0]
            losses[a.id] = (prev, float(np.mean(ls)))
        records.extend(evaluate_all(agents, test, epoch, "kd", losses, messages, started, timing, confusions))
    return RunResult(records, confusions, messages)


def run_fedavg(agents: Sequence[Agent], test: Dataset, cfg: FedConfig, batch_size: int,
               timing: bool = False) -> RunResult:
    agents = sorted(agents, key=lambda a: a.id)
    messages = MessageLog()
    confusions: dict[int, ConfusionMatrix] = {}
    records: list[MetricsRecord] = []
    started = time.perf_counter()
    # every agent starts from the same weights, as a server broadcast would give
    init = agents[0].model.parameters()
    for a in agents[1:]:
        a.model.set_parameters([p.copy() for p in init])
    for rnd in range(1, cfg.rounds + 1):
        ls = fedavg_round(agents, cfg, rnd, batch_size, messages)
        losses = {a.id: (l, 0.0) for a, l in zip(agents, ls)}
        records.extend(evaluate_all(agents, test, rnd, "fedavg", losses, messages, started, timing, confusions))
    return RunResult(records, confusions, messages)


def run_gossip(agents: Sequence[Agent], topology: MeshTopology, test: Dataset, cfg: GossipConfig,
               batch_size: int, timing: bool = False) -> RunResult:
    agents = sorted(agents, key=lambda a: a.id)
    messages = MessageLog()
    confusions: dict[int, ConfusionMatrix] = {}
    records: list[MetricsRecord] = []
    started = time.perf_counter()
    for rnd in range(1, cfg.rounds + 1):
        ls, _ = gossip_round(agents, topology, cfg, rnd, batch_size, messages)
        losses = {a.id: (l, 0.0) for a, l in zip(agents, ls)}
        records.extend(evaluate_all(agents, test, rnd, "gossip-avg", losses, messages, started, timing,
                                    confusions))
    return RunResult(records, confusions, messages)
