"""Command line: ``hkt run`` executes one configured experiment per seed,
``hkt compare`` tabulates finished runs.

Exit status is 0 on success, 2 for bad configuration or missing artifacts,
1 for anything that fails while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError
from .experiment import AGENT_IDS, load_datasets, run_once
from .metrics import read_metrics_csv, write_confusion_csv, write_metrics_csv

log = logging.getLogger("hkt")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hkt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one method/topology over the configured seeds")
    run.add_argument("--config", required=True, help="TOML config or a previous manifest.json")
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--method", help="ours, kd, fedavg, gossip or none")
    run.add_argument("--topology", help="none, half_mesh, full_mesh, transitive or federated_star")
    cmp = sub.add_parser("compare", help="mean and std at the final epoch, as TSV")
    cmp.add_argument("runs", nargs="+", help="run directories")
    return p


def _resolve(args):
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("out", "method", "topology") if getattr(args, k) is not None}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    cfg = replace(cfg, **overrides)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"command line: {exc}") from None


def cmd_run(args) -> int:
    try:
        cfg = _resolve(args)
        datasets = load_datasets(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for seed in cfg.seeds:
            log.info("seed %d: %s on %s", seed, cfg.method, cfg.topology)
            result = run_once(cfg, seed, datasets)
            write_metrics_csv(result.records, out / f"metrics_{seed}.csv")
            for agent, cm in sorted(result.confusions.items()):
                write_confusion_csv(cm, out / f"confusion_{agent}_{seed}.csv")
        manifest = {"config": cfg.to_dict(), "messages_per_seed": result.messages.total}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _final_local(run_dir: Path):
    manifest = run_dir / "manifest.json"
    if not manifest.is_file():
        raise FileNotFoundError(f"{run_dir}: no manifest.json")
    cfg = json.loads(manifest.read_text())["config"]
    rows = []
    for seed in cfg["seeds"]:
        path = run_dir / f"metrics_{seed}.csv"
        if not path.is_file():
            raise FileNotFoundError(f"{run_dir}: missing {path.name}")
        recs = [r for r in read_metrics_csv(path) if r.agent_id == AGENT_IDS[0]]
        if not recs:
            raise FileNotFoundError(f"{path}: no records for the local agent")
        last = max(recs, key=lambda r: r.epoch)
        rows.append((last.local_acc, last.remote_acc, last.combined_acc))
    return cfg, np.array(rows)


def format_table(runs) -> str:
    """``runs`` is a list of ``(name, cfg, rows)``; one TSV line per run."""
    header = ["run", "method", "topology", "seeds", "local", "remote", "combined"]
    lines = [header]
    for name, cfg, rows in runs:
        method = "gossip-avg" if cfg["method"] == "gossip" else cfg["method"]
        cells = [f"{m:.4f}±{s:.4f}" for m, s in zip(rows.mean(axis=0), rows.std(axis=0))]
        lines.append([name, method, cfg["topology"], str(len(rows)), *cells])
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("\t".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        print("error: compare needs at least two run directories", file=sys.stderr)
        return EXIT_CONFIG
    runs = []
    try:
        for d in args.runs:
            cfg, rows = _final_local(Path(d))
            runs.append((d, cfg, rows))
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_table(runs))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return cmd_run(args) if args.command == "run" else cmd_compare(args)


if __name__ == "__main__":
    sys.exit(main())
