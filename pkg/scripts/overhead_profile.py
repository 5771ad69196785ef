"""Per-step cost of the projector build and refinement against one gradient step.

    python3 scripts/overhead_profile.py [--config PATH] [--repeats N]

Prints median microseconds for: a bare LAPACK SVD of the global prompt, the
full build_projector + refine, and loss_and_gradients on one minibatch.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from promptfed.config import load_config
from promptfed.experiment import build_experiment
from promptfed.objectives import Batch, loss_and_gradients
from promptfed.refinement import build_projector, refine


def median_us(fn, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return 1e6 * float(np.median(samples))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--repeats", type=int, default=2000)
    args = ap.parse_args()
    cfg = load_config(args.config)
    exp = build_experiment(cfg)
    client = exp.clients[0]
    g_s, g_c = exp.server.global_prompt, client.local_prompt
    s = exp.settings
    idx = np.arange(min(cfg.batch_size, client.h))
    batch = Batch(client.train_features[idx], client.shard.train.y[idx])
    proj = build_projector(g_s, s.lam, (0, 0), s.svd_method, s.basis_seed)
    refined = refine(g_c, proj)

    svd = median_us(lambda: np.linalg.svd(g_s, full_matrices=False), args.repeats)
    build = median_us(lambda: refine(g_c, build_projector(g_s, s.lam, (0, 0), s.svd_method, s.basis_seed)), args.repeats)
    step = median_us(lambda: loss_and_gradients(g_s, g_c, refined, batch, exp.model, s.loss, proj.R), args.repeats)
    print(f"global prompt {g_s.shape}, local prompt {g_c.shape}, r = {proj.r}, m' = {proj.m_prime}")
    print(f"bare thin SVD            {svd:8.1f} us")
    print(f"build_projector + refine {build:8.1f} us")
    print(f"loss_and_gradients       {step:8.1f} us")
    print(f"refinement share of a step: {build / (build + step):.1%} (bare SVD alone: {svd / (svd + step):.1%})")


if __name__ == "__main__":
    main()
