"""Our method on each knowledge-flow topology, next to the no-transfer baseline."""
import argparse
from pathlib import Path

from hkt.cli import main as hkt

TOPOLOGIES = ("half_mesh", "full_mesh", "transitive")


def parse():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="configs/synthetic_halfmesh.toml")
    p.add_argument("--out", default="runs/mesh")
    return p.parse_args()


def run(args):
    dirs = []
    for topo in TOPOLOGIES:
        out = Path(args.out) / topo
        if hkt(["run", "--config", args.config, "--topology", topo, "--out", str(out)]):
            return 1
        dirs.append(str(out))
    base = Path(args.out) / "none"
    if hkt(["run", "--config", args.config, "--method", "none", "--out", str(base)]):
        return 1
    return hkt(["compare", *dirs, str(base)])


if __name__ == "__main__":
    raise SystemExit(run(parse()))
