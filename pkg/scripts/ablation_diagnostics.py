"""Why the full method trails refinement-only on the synthetic benchmark.

    python3 scripts/ablation_diagnostics.py [--config PATH] [--seeds N] [--gammas ...]

For the full variant this logs, per round, how often the separate hinge is
active and how large the stretch term is, then compares refinement-only
against full over a small grid of margins gamma.
"""
from __future__ import annotations

import argparse

import numpy as np

from promptfed.config import load_config
from promptfed.experiment import build_experiment, variant_config
from promptfed.studies import last_rounds_accuracy


def run(cfg, variant, seed):
    exp = build_experiment(variant_config(cfg.replace(seed=seed), variant))
    exp.run()
    hist = exp.server.history
    sep_active = np.mean([np.mean([b.sep > 0 for b in r.client_losses.values()]) for r in hist])
    stretch = np.mean([r.losses.str for r in hist[-10:]])
    return last_rounds_accuracy(hist), sep_active, stretch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, default=2)
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.8, 2.0, 4.0])
    args = ap.parse_args()
    base = load_config(args.config)
    seeds = [base.seed + i for i in range(args.seeds)]
    ref = np.mean([run(base, "refinement", s)[0] for s in seeds])
    print(f"refinement-only acc {ref:.4f}  (r = {int(base.lam * base.feature_dim)} removed of m = {base.feature_dim}, S_s = {base.global_length})")
    print(f"{'gamma':>6}{'full acc':>10}{'sep active':>12}{'stretch':>10}")
    for gamma in args.gammas:
        rows = np.array([run(base.replace(gamma=gamma), "full", s) for s in seeds])
        acc, active, stretch = rows.mean(axis=0)
        print(f"{gamma:>6g}{acc:>10.4f}{active:>12.2%}{stretch:>10.4f}")
    rows = np.array([run(base.replace(disable_sep=True), "full", s) for s in seeds])
    print(f"full without separate (stretch only): acc {rows[:, 0].mean():.4f}")


if __name__ == "__main__":
    main()
