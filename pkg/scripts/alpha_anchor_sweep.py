"""Final-epoch accuracy of the local agent across loss weights, transfer
learning rates and anchor modes, against the no-transfer run."""
import argparse
import itertools
from dataclasses import replace

import numpy as np

from hkt.config import load_config
from hkt.experiment import load_datasets, run_once


def parse():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/synthetic_halfmesh.toml")
    p.add_argument("--alphas", type=float, nargs="+", default=[0.5, 0.8, 0.95, 1.0])
    p.add_argument("--lrs", type=float, nargs="+", default=[0.001, 0.01])
    p.add_argument("--anchors", nargs="+", default=["reset", "phase"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    return p.parse_args()


def final_local(cfg, seeds, data):
    rows = []
    for s in seeds:
        res = run_once(cfg, s, data)
        r = [r for r in res.records if r.agent_id == 0][-1]
        rows.append((r.local_acc, r.remote_acc, r.combined_acc))
    return np.mean(rows, axis=0)


def main():
    args = parse()
    cfg = load_config(args.config)
    data = load_datasets(cfg)
    print("anchor\talpha\tlr_transfer\tlocal\tremote\tcombined")
    ref = final_local(replace(cfg, method="none"), args.seeds, data)
    print("none\t-\t-\t" + "\t".join(f"{v:.3f}" for v in ref))
    with np.errstate(all="ignore"):
        for anchor, alpha, lr in itertools.product(args.anchors, args.alphas, args.lrs):
            run = replace(cfg, method="ours", transfer_anchor=anchor, alpha=alpha, lr_transfer=lr)
            acc = final_local(run, args.seeds, data)
            print(f"{anchor}\t{alpha}\t{lr}\t" + "\t".join(f"{v:.3f}" for v in acc))


if __name__ == "__main__":
    main()
