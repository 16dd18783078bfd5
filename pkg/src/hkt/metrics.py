"""Evaluation and CSV artifacts.

Accuracy is split three ways for an agent: over test samples of its own
classes (local), of every other class (remote), and over the full test set
(combined).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, InputError

METRICS_HEADER = (
    "epoch", "agent", "method", "local_acc", "remote_acc", "combined_acc",
    "loss1", "loss2", "messages", "seconds",
)


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""

    counts: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.shape != (k, k) or (self.counts < 0).any():
            raise InputError(f"confusion counts must be a non-negative square grid, got {self.counts.shape}")
        if not self.class_names:
            self.class_names = tuple(str(i) for i in range(k))
        elif len(self.class_names) != k:
            raise InputError(f"{len(self.class_names)} class names for {k} classes")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int, class_names=()) -> ConfusionMatrix:
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts, tuple(class_names))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return int(np.trace(self.counts)) / self.total


@dataclass(frozen=True)
class Accuracies:
    local_acc: float
    remote_acc: float
    combined_acc: float
    confusion: ConfusionMatrix


@dataclass
class MetricsRecord:
    epoch: int
    agent_id: int
    method: str
    local_acc: float
    remote_acc: float
    combined_acc: float
    loss1: float
    loss2: float
    messages_total: int
    wall_clock_seconds: float = 0.0


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def split_accuracy(confusion: ConfusionMatrix, local_classes: Iterable[int]) -> tuple[float, float, float]:
    """Local, remote and combined accuracy read off a confusion matrix."""
    local = sorted(set(local_classes))
    k = confusion.n_classes
    if any(not 0 <= c < k for c in local):
        raise ConfigError(f"local classes {local} not a subset of the {k} classes")
    diag = np.diag(confusion.counts)
    rows = confusion.counts.sum(axis=1)
    mask = np.zeros(k, dtype=bool)
    mask[local] = True
    return (
        _ratio(int(diag[mask].sum()), int(rows[mask].sum())),
        _ratio(int(diag[~mask].sum()), int(rows[~mask].sum())),
        _ratio(int(diag.sum()), int(rows.sum())),
    )


def evaluate(agent, test, local_classes: Iterable[int]) -> Accuracies:
    """Score ``agent.model`` (or a bare DenseNet) on the test split."""
    if len(test) == 0:
        raise InputError("cannot evaluate on an empty test set")
    net = getattr(agent, "model", agent)
    pred = nn.predict(net, test.features)
    cm = ConfusionMatrix.from_predictions(test.labels, pred, test.n_classes, test.class_names)
    return Accuracies(*split_accuracy(cm, local_classes), cm)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.6f}"


def write_metrics_csv(records: Sequence[MetricsRecord], path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for r in records:
                w.writerow([_fmt(getattr(r, f.name)) for f in fields(MetricsRecord)])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics_csv(path) -> list[MetricsRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise InputError(f"{path}: not a metrics file")
    out = []
    for row in rows[1:]:
        out.append(MetricsRecord(
            int(row[0]), int(row[1]), row[2], float(row[3]), float(row[4]), float(row[5]),
            float(row[6]), float(row[7]), int(row[8]), float(row[9]),
        ))
    return out


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cm.class_names)
            w.writerows(cm.counts.tolist())
    except OSError as exc:
        raise OSError(f"cannot write confusion matrix to {path}: {exc}") from exc


def read_confusion_csv(path) -> ConfusionMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return ConfusionMatrix(np.array([[int(v) for v in r] for r in rows[1:]]), tuple(rows[0]))


@dataclass(frozen=True)
class SummaryCell:
    epoch: int
    agent_id: int
    metric: str
    mean: float
    std: float


SUMMARY_METRICS = ("local_acc", "remote_acc", "combined_acc", "loss1", "loss2")


def summarize_runs(runs: Sequence[Sequence[MetricsRecord]]) -> list[SummaryCell]:
    """Per-(epoch, agent, metric) mean and population standard deviation across seeds."""
    if not runs:
        raise InputError("need at least one run")
    keys = [(r.epoch, r.agent_id) for r in runs[0]]
    for run in runs[1:]:
        if [(r.epoch, r.agent_id) for r in run] != keys:
            raise InputError("runs cover different (epoch, agent) cells")
    out = []
    for i, (epoch, agent) in enumerate(keys):
        for metric in SUMMARY_METRICS:
            vals = np.array([getattr(run[i], metric) for run in runs], dtype=np.float64)
            out.append(SummaryCell(epoch, agent, metric, float(vals.mean()), float(vals.std())))
    return out
