"""Agents, knowledge-flow topologies and the simulation loop.

Each transfer phase reads sources through ``SourceSnapshot``s frozen at phase
start, so the order in which targets are processed never matters and a serial
run equals a parallel one.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import nn
from .data import Dataset, DatasetPartition, batches
from .errors import ConfigError, InputError
from .metrics import ConfusionMatrix, MetricsRecord, evaluate
from .rng import derive_seed
from .transfer import LossWeights, Pipeline, SourceSnapshot, TransferModel, pipeline_step

log = logging.getLogger(__name__)

PRESETS = ("none", "half_mesh", "full_mesh", "transitive", "federated_star")
SCHEDULE_MODES = ("epoch_interleaved", "batch_interleaved")
ANCHORS = ("phase", "step", "reset")


@dataclass
class Agent:
    id: int
    model: nn.DenseNet
    optimizer: nn.SgdState
    partition: DatasetPartition
    classes: frozenset[int]
    seed: int
    pipelines: dict[int, Pipeline] = field(default_factory=dict)

    def add_pipeline(self, source_id: int, learning_rate: float, momentum: float = 0.0) -> Pipeline:
        idx = self.model.hosted_index
        n = self.model.layers[idx].n_in
        pipe = Pipeline(source_id, idx, TransferModel.selector(n, learning_rate, momentum))
        self.pipelines[source_id] = pipe
        return pipe

    def snapshot(self) -> SourceSnapshot:
        return SourceSnapshot.take(self.id, self.model)

    def epoch_seed(self, epoch: int, phase: str) -> int:
        return derive_seed(self.seed, "batches", epoch, phase)


@dataclass(frozen=True)
class MeshTopology:
    agent_ids: frozenset[int]
    edges: frozenset[tuple[int, int]]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", frozenset(self.agent_ids))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        for src, dst in self.edges:
            if src == dst:
                raise ConfigError(f"self-edge on agent {src}")
            if src not in self.agent_ids or dst not in self.agent_ids:
                raise ConfigError(f"edge {src}->{dst} references an unknown agent")

    def sources_of(self, target: int) -> list[int]:
        return sorted(s for s, t in self.edges if t == target)

    def undirected_pairs(self) -> list[tuple[int, int]]:
        return sorted({(min(e), max(e)) for e in self.edges})


def build_preset(name: str, agent_ids: Sequence[int]) -> MeshTopology:
    """``agent_ids`` is ``(local, A, B)``; edges point from source to target."""
    if name not in PRESETS:
        raise ConfigError(f"unknown topology {name!r}; choose from {', '.join(PRESETS)}")
    if len(agent_ids) != 3 or len(set(agent_ids)) != 3:
        raise ConfigError(f"topology presets need exactly 3 distinct agents, got {list(agent_ids)}")
    loc, a, b = agent_ids
    edges = {
        "none": set(),
        "half_mesh": {(a, loc), (b, loc)},
        "full_mesh": {(a, loc), (b, loc), (a, b), (b, a), (loc, a), (loc, b)},
        "transitive": {(a, b), (b, loc)},
        # consumed by federated averaging, which ignores edges
        "federated_star": set(),
    }[name]
    return MeshTopology(frozenset(agent_ids), frozenset(edges), name)


@dataclass
class Schedule:
    mode: str = "epoch_interleaved"
    total_epochs: int = 25

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")


@dataclass
class MessageLog:
    """One message per snapshot fetch, keyed by (source, target, epoch)."""

    counts: dict[tuple[int, int, int], int] = field(default_factory=dict)
    total: int = 0

    def record(self, source: int, target: int, epoch: int, n: int = 1) -> None:
        if n < 0:
            raise ValueError("message counts cannot decrease")
        key = (source, target, epoch)
        self.counts[key] = self.counts.get(key, 0) + n
        self.total += n


@dataclass(frozen=True)
class SourceAdvertisement:
    agent_id: int
    class_counts: dict[int, int]
    layer_shape: tuple[int, int]

    def __post_init__(self):
        if any(n < 0 for n in self.class_counts.values()):
            raise InputError("advertised class counts must be non-negative")

    @property
    def class_set(self) -> frozenset[int]:
        return frozenset(self.class_counts)


class SourceScore(NamedTuple):
    intersection: int
    difference: int
    compatible: bool
    class_counts: dict[int, int]


def advertise(agent: Agent) -> SourceAdvertisement:
    """Counts are taken after the mix-in top-up."""
    shape = agent.model.layers[agent.model.hosted_index].weights.shape
    return SourceAdvertisement(agent.id, agent.partition.class_counts(), shape)


def score_source(target_ad: SourceAdvertisement, candidate_ad: SourceAdvertisement) -> SourceScore:
    """Class overlap, classes only the candidate has seen, and layer compatibility."""
    return SourceScore(
        len(candidate_ad.class_set & target_ad.class_set),
        len(candidate_ad.class_set - target_ad.class_set),
        candidate_ad.layer_shape == target_ad.layer_shape,
        dict(candidate_ad.class_counts),
    )


def local_train_step(agent: Agent, batch) -> float:
    x, labels = batch
    if len(labels) == 0:
        raise InputError(f"empty batch for agent {agent.id}")
    logits, cache = nn.forward(agent.model, x)
    loss, grad = nn.cross_entropy(logits, labels)
    grads = nn.flatten_grads(nn.backward(agent.model, cache, grad))
    agent.model.set_parameters(nn.sgd_step(agent.model.parameters(), grads, agent.optimizer))
    return loss


def local_epoch(agent: Agent, epoch: int, batch_size: int) -> float:
    losses = [local_train_step(agent, b)
              for b in batches(agent.partition, batch_size, agent.epoch_seed(epoch, "local"))]
    return float(np.mean(losses))


class EpochLosses(NamedTuple):
    loss1: float
    loss2: float
    combined: float


def _transfer_batch(target, snaps, batch, weights, objective, base):
    """Chain the pipelines from ``base``: each one fuses its source with the
    layer produced by the previous pipeline on this batch."""
    teachers = [s.distribution(batch[0]) for s in snaps]
    layer = target.model.layers[target.model.hosted_index]
    steps = []
    for s in snaps:
        steps.append(pipeline_step(target, s, batch, weights, teachers=teachers,
                                   objective=objective, base=base))
        base = layer.weights
    return steps


def transfer_epoch(
    target: Agent,
    sources: Sequence[SourceSnapshot],
    epoch: int,
    batch_size: int,
    weights: LossWeights,
    messages: MessageLog,
    objective: str = "combined",
    anchor: str = "phase",
) -> EpochLosses:
    """Run every pipeline over one pass of the target's own batches.

    Pipelines go in ascending source id; each sees the layer the previous one
    left behind. The transfer term is the KL averaged over all sources.

    ``anchor`` picks the target half of the fused input: ``"phase"`` uses the
    layer as it stood when the epoch began, ``"step"`` the layer as left by
    the previous batch (fusion compounds batch over batch), and ``"reset"``
    is ``"phase"`` followed by folding the result into the layer and putting
    every transfer map back to the selector.
    """
    if anchor not in ANCHORS:
        raise ConfigError(f"unknown transfer anchor {anchor!r}")
    if not sources:
        return EpochLosses(0.0, 0.0, 0.0)
    snaps = sorted(sources, key=lambda s: s.agent_id)
    for s in snaps:
        if s.agent_id not in target.pipelines:
            raise ConfigError(f"agent {target.id} has no pipeline from source {s.agent_id}")
    for s in snaps:
        messages.record(s.agent_id, target.id, epoch)
    layer = target.model.layers[target.model.hosted_index]
    base = layer.weights.copy()
    steps = []
    for batch in batches(target.partition, batch_size, target.epoch_seed(epoch, "transfer")):
        if anchor == "step":
            base = layer.weights
        steps.extend(_transfer_batch(target, snaps, batch, weights, objective, base))
    if anchor == "reset":
        for s in snaps:
            target.pipelines[s.agent_id].model.reset()
    return EpochLosses(*(float(np.mean([getattr(s, f) for s in steps]))
                         for f in ("loss1", "loss2", "combined")))


@dataclass
class RunResult:
    records: list[MetricsRecord]
    confusions: dict[int, ConfusionMatrix]
    messages: MessageLog


def connect(agents: Sequence[Agent], topology: MeshTopology, lr_transfer: float, momentum: float = 0.0) -> None:
    by_id = {a.id: a for a in agents}
    if set(by_id) != set(topology.agent_ids):
        raise ConfigError(f"topology agents {sorted(topology.agent_ids)} != {sorted(by_id)}")
    for src, dst in sorted(topology.edges):
        if src not in by_id[dst].pipelines:
            by_id[dst].add_pipeline(src, lr_transfer, momentum)


def evaluate_all(agents, test: Dataset, epoch: int, method: str, losses: dict, messages: MessageLog,
                 started: float, timing: bool, confusions: dict) -> list[MetricsRecord]:
    out = []
    elapsed = time.perf_counter() - started if timing else 0.0
    for a in agents:
        acc = evaluate(a, test, a.classes)
        confusions[a.id] = acc.confusion
        l1, l2 = losses.get(a.id, (0.0, 0.0))
        out.append(MetricsRecord(epoch, a.id, method, acc.local_acc, acc.remote_acc,
                                 acc.combined_acc, l1, l2, messages.total, elapsed))
    return out


def run_simulation(
    agents: Sequence[Agent],
    topology: MeshTopology,
    schedule: Schedule,
    weights: LossWeights,
    test: Dataset,
    batch_size: int = 32,
    lr_transfer: float = 0.01,
    method: str = "ours",
    objective: str = "combined",
    train_sources: bool = True,
    timing: bool = False,
    anchor: str = "phase",
) -> RunResult:
    """Alternate local and transfer epochs (or interleave per batch) and
    evaluate every agent after each epoch pair.

    With ``train_sources=False`` only agents that have in-edges keep training
    locally; pure sources stay frozen.
    """
    agents = sorted(agents, key=lambda a: a.id)
    if len({a.id for a in agents}) != len(agents):
        raise ConfigError("agent ids must be unique")
    connect(agents, topology, lr_transfer)
    for a in agents:
        extra = set(a.pipelines) - set(topology.sources_of(a.id))
        if extra:
            raise ConfigError(f"agent {a.id} has pipelines from {sorted(extra)} without topology edges")
    messages = MessageLog()
    confusions: dict[int, ConfusionMatrix] = {}
    records: list[MetricsRecord] = []
    started = time.perf_counter()

    for epoch in range(1, schedule.total_epochs + 1):
        learners = [a for a in agents if train_sources or topology.sources_of(a.id)]
        learner_ids = {a.id for a in learners}
        losses = {}
        if schedule.mode == "epoch_interleaved":
            for a in learners:
                losses[a.id] = (local_epoch(a, epoch, batch_size), 0.0)
            snaps = {a.id: a.snapshot() for a in agents}
            for a in agents:
                srcs = [snaps[s] for s in topology.sources_of(a.id)]
                if srcs:
                    e = transfer_epoch(a, srcs, epoch, batch_size, weights, messages, objective, anchor)
                    losses[a.id] = (losses.get(a.id, (e.loss1, 0.0))[0], e.loss2)
        else:
            snaps = {a.id: a.snapshot() for a in agents}
            for a in agents:
                srcs = sorted((snaps[s] for s in topology.sources_of(a.id)), key=lambda s: s.agent_id)
                for s in srcs:
                    messages.record(s.agent_id, a.id, epoch)
                if a.id not in learner_ids:
                    continue
                l1s, l2s = [], []
                for batch in batches(a.partition, batch_size, a.epoch_seed(epoch, "local")):
                    l1s.append(local_train_step(a, batch))
                    if srcs:
                        base = a.model.layers[a.model.hosted_index].weights.copy()
                        steps = _transfer_batch(a, srcs, batch, weights, objective, base)
                        l2s.append(np.mean([st.loss2 for st in steps]))
                        if anchor != "step":
                            # the fused layer is already in place; start the next batch from the selector
                            for s in srcs:
                                a.pipelines[s.agent_id].model.reset()
                losses[a.id] = (float(np.mean(l1s)), float(np.mean(l2s)) if l2s else 0.0)
        records.extend(evaluate_all(agents, test, epoch, method, losses, messages,
                                    started, timing, confusions))
        log.debug("epoch %d: %s", epoch, [(r.agent_id, round(r.combined_acc, 3)) for r in records[-len(agents):]])
    return RunResult(records, confusions, messages)
