"""Datasets, IDX ingestion and the class-disjoint partitioning with mix-in."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError, InputError
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FMNIST_CLASSES = (
    "T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot",
)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise InputError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InputError(f"labels must lie in [0, {self.n_classes})")
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(str(k) for k in range(self.n_classes)))

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass
class PartitionSpec:
    """``class_assignment`` is ordered; its first agent is the local one."""

    class_assignment: dict[int, frozenset[int]]
    mixin_fraction: float = 0.05

    def __post_init__(self):
        self.class_assignment = {
            int(a): frozenset(int(c) for c in cs) for a, cs in self.class_assignment.items()
        }
        if not self.class_assignment:
            raise ConfigError("partition spec assigns no agents")
        if not 0.0 <= self.mixin_fraction < 1.0:
            raise ConfigError(f"mixin_fraction {self.mixin_fraction} outside [0, 1)")
        seen: dict[int, int] = {}
        for agent, classes in self.class_assignment.items():
            for c in classes:
                if c in seen:
                    raise ConfigError(f"class {c} assigned to both agent {seen[c]} and agent {agent}")
                seen[c] = agent

    @property
    def local_agent(self) -> int:
        return next(iter(self.class_assignment))


@dataclass(frozen=True, eq=False)
class DatasetPartition:
    owner: int
    indices: np.ndarray
    dataset: Dataset = field(repr=False)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def class_counts(self) -> dict[int, int]:
        labels = self.dataset.labels[self.indices]
        return {int(c): int(n) for c, n in zip(*np.unique(labels, return_counts=True))}


def generate_blobs(
    n_classes: int, samples_per_class: int, dims: int, spread: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian clusters around random unit-norm class means.

    ``samples_per_class`` counts train and test together; each class is split
    80/20.
    """
    if min(n_classes, samples_per_class, dims) < 1 or spread < 0:
        raise ConfigError("generate_blobs needs positive sizes and a non-negative spread")
    means_rng = stream(seed, "blobs", "means")
    means = means_rng.standard_normal((n_classes, dims))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    n_train = int(round(0.8 * samples_per_class))
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for k in range(n_classes):
        rng = stream(seed, "blobs", "class", k)
        pts = means[k] + spread * rng.standard_normal((samples_per_class, dims))
        tr_x.append(pts[:n_train])
        te_x.append(pts[n_train:])
        tr_y.append(np.full(n_train, k))
        te_y.append(np.full(samples_per_class - n_train, k))
    train = Dataset(np.vstack(tr_x), np.concatenate(tr_y), n_classes, "train")
    test = Dataset(np.vstack(te_x), np.concatenate(te_y), n_classes, "test")
    return train, test


def _open(path):
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else path.open("rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (observed,) = struct.unpack(">I", raw[:4])
    if observed != magic:
        raise FormatError(f"{path}: magic 0x{observed:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header < count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(shape)


def load_idx(images_path, labels_path, n_classes: int = 10, split: str = "train",
             class_names: tuple[str, ...] = ()) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), n_classes, split, class_names)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 ``images`` (n, rows, cols) and ``labels`` (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def subsample_per_class(ds: Dataset, per_class: int, seed: int) -> Dataset:
    rng = stream(seed, "subsample", ds.split)
    keep = []
    for k in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size > per_class:
            idx = np.sort(rng.choice(idx, per_class, replace=False))
        keep.append(idx)
    keep = np.sort(np.concatenate(keep))
    return Dataset(ds.features[keep], ds.labels[keep], ds.n_classes, ds.split, ds.class_names)


def partition_noniid(train: Dataset, spec: PartitionSpec, seed: int) -> dict[int, DatasetPartition]:
    """Give each agent every training sample of its classes; then top up the
    local agent with ``floor(mixin_fraction * size)`` samples it does not own,
    drawn uniformly without replacement.
    """
    for agent, classes in spec.class_assignment.items():
        bad = [c for c in classes if not 0 <= c < train.n_classes]
        if bad:
            raise ConfigError(f"agent {agent} assigned unknown classes {sorted(bad)}")
    parts = {}
    for agent, classes in spec.class_assignment.items():
        idx = np.flatnonzero(np.isin(train.labels, sorted(classes)))
        parts[agent] = idx
    local = spec.local_agent
    n_extra = int(np.floor(spec.mixin_fraction * parts[local].size))
    if n_extra:
        pool = np.setdiff1d(np.arange(len(train)), parts[local])
        rng = stream(seed, "mixin")
        extra = rng.choice(pool, n_extra, replace=False)
        parts[local] = np.sort(np.concatenate([parts[local], extra]))
    return {a: DatasetPartition(a, idx, train) for a, idx in parts.items()}


def batch_indices(partition: DatasetPartition, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    if len(partition) == 0:
        raise InputError(f"partition of agent {partition.owner} is empty")
    order = np.random.default_rng(epoch_seed).permutation(partition.indices)
    return [order[s:s + batch_size] for s in range(0, order.size, batch_size)]


def batches(partition: DatasetPartition, batch_size: int, epoch_seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Shuffled ``(x, labels)`` minibatches; the last one may be short."""
    ds = partition.dataset
    for idx in batch_indices(partition, batch_size, epoch_seed):
        yield ds.features[idx], ds.labels[idx]
