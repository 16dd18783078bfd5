"""Wire a ``RunConfig`` into datasets, agents and one method run per seed."""
from __future__ import annotations

import os
from pathlib import Path

from . import baselines, nn
from .config import RunConfig
from .data import (
    FMNIST_CLASSES, Dataset, PartitionSpec, generate_blobs, load_idx, partition_noniid,
    subsample_per_class,
)
from .errors import ConfigError
from .rng import derive_seed, stream
from .sim import Agent, RunResult, Schedule, build_preset, run_simulation
from .transfer import LossWeights

AGENT_IDS = (0, 1, 2)


def _fmnist_file(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (root / name).exists():
            return root / name
    raise ConfigError(f"FMNIST file {stem}[.gz] not found under {root}")


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "synthetic":
        return generate_blobs(cfg.n_classes, cfg.samples_per_class, cfg.dims, cfg.spread, cfg.data_seed)
    root = Path(cfg.fmnist_dir or os.environ.get("HKT_FMNIST_DIR", ""))
    if not str(root) or not root.is_dir():
        raise ConfigError("fmnist_dir (or HKT_FMNIST_DIR) must point at the FMNIST IDX files")
    train = load_idx(_fmnist_file(root, "train-images-idx3-ubyte"),
                     _fmnist_file(root, "train-labels-idx1-ubyte"), 10, "train", FMNIST_CLASSES)
    test = load_idx(_fmnist_file(root, "t10k-images-idx3-ubyte"),
                    _fmnist_file(root, "t10k-labels-idx1-ubyte"), 10, "test", FMNIST_CLASSES)
    return (subsample_per_class(train, cfg.fmnist_train_per_class, cfg.data_seed),
            subsample_per_class(test, cfg.fmnist_test_per_class, cfg.data_seed))


def build_agents(cfg: RunConfig, train: Dataset, seed: int) -> list[Agent]:
    """Agents 0 (local), 1 and 2. Each draws its initial weights from its own
    stream unless ``shared_init`` gives all of them agent 0's."""
    assignment = {AGENT_IDS[0]: cfg.local_classes}
    for aid, classes in zip(AGENT_IDS[1:], cfg.remote_classes):
        assignment[aid] = classes
    spec = PartitionSpec(assignment, cfg.mixin_fraction)
    parts = partition_noniid(train, spec, seed)
    sizes = [train.dims, cfg.hidden, cfg.hidden, train.n_classes]
    agents = []
    for aid in AGENT_IDS:
        net = nn.DenseNet.init(sizes, stream(seed, "init", 0 if cfg.shared_init else aid))
        agents.append(Agent(aid, net, nn.SgdState(cfg.lr_local, cfg.momentum), parts[aid],
                            spec.class_assignment[aid], derive_seed(seed, "agent", aid)))
    return agents


def run_once(cfg: RunConfig, seed: int, datasets: tuple[Dataset, Dataset] | None = None) -> RunResult:
    train, test = datasets or load_datasets(cfg)
    agents = build_agents(cfg, train, seed)
    schedule = Schedule(cfg.schedule, cfg.epochs)
    if cfg.method == "fedavg":
        return baselines.run_fedavg(
            agents, test, baselines.FedConfig(cfg.epochs, cfg.fed_local_epochs, cfg.fed_weighted),
            cfg.batch_size, timing=cfg.timing)
    topo_name = "none" if cfg.method == "none" else cfg.topology
    topology = build_preset(topo_name, AGENT_IDS)
    if cfg.method == "gossip":
        gcfg = baselines.GossipConfig(cfg.epochs, cfg.gossip_mixing_weight, stream(seed, "gossip"))
        return baselines.run_gossip(agents, topology, test, gcfg, cfg.batch_size, timing=cfg.timing)
    if cfg.method == "kd":
        kcfg = baselines.KdConfig(cfg.kd_lambda, cfg.kd_distance)
        return baselines.run_kd(agents, topology, schedule, test, kcfg, cfg.batch_size,
                                train_sources=cfg.train_sources, timing=cfg.timing)
    return run_simulation(
        agents, topology, schedule, LossWeights.from_alpha(cfg.alpha), test,
        batch_size=cfg.batch_size, lr_transfer=cfg.lr_transfer, method=cfg.method,
        objective=cfg.pipeline_objective, train_sources=cfg.train_sources, timing=cfg.timing,
        anchor=cfg.transfer_anchor,
    )
