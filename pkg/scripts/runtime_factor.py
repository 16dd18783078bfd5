"""Wall-clock cost of transfer relative to plain local training.

The factor depends on the machine; it is reported, never asserted.
"""
import argparse
import time
from dataclasses import replace

from hkt.config import load_config
from hkt.experiment import load_datasets, run_once


def parse():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/synthetic_halfmesh.toml")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    return p.parse_args()


def wall(cfg, seeds, data):
    start = time.perf_counter()
    for s in seeds:
        run_once(cfg, s, data)
    return (time.perf_counter() - start) / len(seeds)


def main():
    args = parse()
    cfg = load_config(args.config)
    data = load_datasets(cfg)
    base = wall(replace(cfg, method="none"), args.seeds, data)
    print("method\tseconds/run\tfactor\tseconds/epoch")
    for method in ("none", "ours", "kd", "fedavg", "gossip"):
        t = base if method == "none" else wall(replace(cfg, method=method), args.seeds, data)
        print(f"{method}\t{t:.2f}\t{t / base:.2f}\t{t / cfg.epochs:.3f}")


if __name__ == "__main__":
    main()
