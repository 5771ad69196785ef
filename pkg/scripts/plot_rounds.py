"""Plot accuracy and global gradient norm from one or more rounds.csv files.

    python3 scripts/plot_rounds.py out/default/rounds.csv [...] --save curves.png

Needs matplotlib, which the package itself does not depend on.
"""
from __future__ import annotations

import argparse
import csv

import numpy as np


def read_aggregate(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["client_id"] == "-1"]
    return (np.array([int(r["round"]) for r in rows]), np.array([float(r["acc"]) for r in rows]),
            np.array([float(r["grad_norm_global"]) for r in rows]))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv", nargs="+")
    ap.add_argument("--save", help="write the figure here instead of showing it")
    args = ap.parse_args()
    import matplotlib

    if args.save:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_acc, ax_grad) = plt.subplots(1, 2, figsize=(10, 4))
    for path in args.csv:
        z, acc, grad = read_aggregate(path)
        ax_acc.plot(z, acc, label=path)
        ax_grad.semilogy(z, grad**2, label=path)
    ax_acc.set(xlabel="round", ylabel="mean client accuracy")
    ax_grad.set(xlabel="round", ylabel="squared global gradient norm")
    ax_acc.legend(fontsize="small")
    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=120)
    else:
        plt.show()


if __name__ == "__main__":
    main()
