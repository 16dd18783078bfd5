"""Run every method on one config and print the final-epoch comparison table."""
import argparse
from pathlib import Path

from hkt.cli import main as hkt

METHODS = ("ours", "kd", "fedavg", "gossip", "none")


def parse():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="configs/synthetic_halfmesh.toml")
    p.add_argument("--out", default="runs/table1")
    p.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    return p.parse_args()


def run(args):
    dirs = []
    for method in args.methods:
        out = Path(args.out) / method
        rc = hkt(["run", "--config", args.config, "--method", method, "--out", str(out)])
        if rc:
            return rc
        dirs.append(str(out))
    return hkt(["compare", *dirs])


if __name__ == "__main__":
    raise SystemExit(run(parse()))
