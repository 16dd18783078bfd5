"""Run configuration: a sectioned TOML file flattened into ``RunConfig``.

Section names only group keys; every key is unique across sections. A JSON
manifest written by a previous run is accepted as a config too.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

DATASETS = ("synthetic", "fmnist")
METHODS = ("ours", "kd", "fedavg", "gossip", "none")
TOPOLOGIES = ("none", "half_mesh", "full_mesh", "transitive", "federated_star")
SCHEDULES = ("epoch_interleaved", "batch_interleaved")


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    n_classes: int = 10
    samples_per_class: int = 1250
    dims: int = 16
    spread: float = 0.25
    data_seed: int = 0
    fmnist_dir: str = ""
    fmnist_train_per_class: int = 500
    fmnist_test_per_class: int = 100
    local_classes: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    remote_classes: list[list[int]] = field(default_factory=lambda: [[4, 5, 6], [7, 8, 9]])
    mixin_fraction: float = 0.05
    hidden: int = 32
    method: str = "ours"
    topology: str = "half_mesh"
    schedule: str = "epoch_interleaved"
    epochs: int = 25
    batch_size: int = 32
    lr_local: float = 0.05
    lr_transfer: float = 0.01
    momentum: float = 0.0
    alpha: float = 0.5
    pipeline_objective: str = "combined"
    transfer_anchor: str = "reset"
    shared_init: bool = False
    train_sources: bool = True
    kd_lambda: float = 1.0
    kd_distance: str = "mse"
    gossip_mixing_weight: float = 1.0
    fed_local_epochs: int = 1
    fed_weighted: bool = False
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: str = "runs/latest"
    timing: bool = False

    def validate(self) -> RunConfig:
        checks = [
            (self.dataset in DATASETS, "dataset", f"must be one of {DATASETS}"),
            (self.method in METHODS, "method", f"must be one of {METHODS}"),
            (self.topology in TOPOLOGIES, "topology", f"must be one of {TOPOLOGIES}"),
            (self.schedule in SCHEDULES, "schedule", f"must be one of {SCHEDULES}"),
            (0.0 <= self.alpha <= 1.0, "alpha", "must lie in [0, 1]"),
            (self.epochs >= 1, "epochs", "must be >= 1"),
            (len(self.seeds) > 0, "seeds", "must be non-empty"),
            (self.batch_size >= 1, "batch_size", "must be >= 1"),
            (self.hidden >= 1, "hidden", "must be >= 1"),
            (self.lr_local >= 0 and self.lr_transfer >= 0, "lr_local", "learning rates must be >= 0"),
            (0.0 <= self.mixin_fraction < 1.0, "mixin_fraction", "must lie in [0, 1)"),
            (0.0 < self.gossip_mixing_weight <= 1.0, "gossip_mixing_weight", "must lie in (0, 1]"),
            (self.kd_lambda >= 0, "kd_lambda", "must be >= 0"),
            (self.kd_distance in ("mse", "l1"), "kd_distance", "must be 'mse' or 'l1'"),
            (self.fed_local_epochs >= 1, "fed_local_epochs", "must be >= 1"),
            (len(self.remote_classes) == 2, "remote_classes", "needs exactly two remote agents"),
            (self.transfer_anchor in ("phase", "step", "reset"), "transfer_anchor",
             "must be 'phase', 'step' or 'reset'"),
            (self.pipeline_objective in ("combined", "loss2"), "pipeline_objective",
             "must be 'combined' or 'loss2'"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")
        return self

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    def to_dict(self) -> dict:
        return asdict(self)


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf'^[ \t]*"?{re.escape(key)}"?[ \t]*[=:]', re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _flatten(doc: dict) -> dict:
    flat = {}
    for k, v in doc.items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                flat[kk] = vv
        else:
            flat[k] = v
    return flat


def from_mapping(doc: dict, source: str = "<config>", text: str = "") -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    flat = _flatten(doc)
    for key in flat:
        if key not in known:
            line = _line_of(text, key)
            where = f"{source}:{line}" if line else source
            raise ConfigError(f"{where}: unknown key {key!r}")
    defaults = RunConfig()
    for key, value in flat.items():
        expected = type(getattr(defaults, key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            line = _line_of(text, key)
            where = f"{source}:{line}" if line else source
            raise ConfigError(f"{where}: {key} should be {expected.__name__}, got {value!r}")
        flat[key] = value
    cfg = RunConfig(**flat)
    try:
        return cfg.validate()
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        line = _line_of(text, key)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        doc = doc.get("config", doc)
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_mapping(doc, str(path), text)
