"""Command line entry point.

    promptfed run|ablate|checks|convergence|sweep-lengths [--config PATH] [--out DIR] [--seed N] [--workers N]

``PROMPTFED_SEED`` in the environment overrides the config file's seed;
``--seed`` overrides both.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import checks as checks_mod
from .config import ExperimentConfig, load_config
from .experiment import build_experiment
from .prompts import ConfigurationError
from .reporting import summarize_csv, write_run_artifacts
from .studies import run_ablation, run_convergence, run_length_sweep

log = logging.getLogger("promptfed")


def _seeds(cfg: ExperimentConfig, count: int) -> list[int]:
    return [cfg.seed + i for i in range(count)]


def _run_dir(args, cfg: ExperimentConfig, suffix: str = "") -> Path:
    out = Path(args.out) / (cfg.name + suffix)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args, cfg: ExperimentConfig) -> int:
    t0 = time.perf_counter()
    exp = build_experiment(cfg)

    def progress(report):
        log.info("round %3d  acc %.4f  loss %.4f  |grad| %.3e", report.round, report.mean_accuracy, report.losses.total, report.global_grad_norm)

    exp.run(workers=args.workers, on_round=progress)
    out = _run_dir(args, cfg)
    paths = write_run_artifacts(cfg, exp.server.history, out)
    summary = summarize_csv(paths["rounds.csv"])
    print(f"wrote {out} ({len(exp.server.history)} rounds, {time.perf_counter() - t0:.1f}s)")
    print(f"last-{summary.window}-round accuracy {summary.mean_accuracy:.4f} +- {summary.std_accuracy:.4f}")
    return 0


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    result = run_ablation(cfg, _seeds(cfg, args.seeds), args.workers, progress=log.info)
    out = _run_dir(args, cfg, "-ablation")
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "acc"])
        for variant, accs in result.accuracy.items():
            for seed, acc in zip(result.seeds, accs):
                w.writerow([variant, seed, repr(acc)])
    table = result.table()
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    (out / "config.snapshot").write_text(cfg.to_text(), encoding="utf-8")
    print(table)
    return 0 if result.shared_partitions else 1


def cmd_checks(args, cfg: ExperimentConfig) -> int:
    results = checks_mod.run_checks(args.suite or None, args.fault or (), seed=cfg.seed)
    for res in results:
        print(res.line())
        for note in res.notes:
            print(f"    {note}")
    failed = [r.name for r in results if not r.passed]
    print("all suites passed" if not failed else f"failed: {', '.join(failed)}")
    return 1 if failed else 0


def cmd_convergence(args, cfg: ExperimentConfig) -> int:
    result = run_convergence(cfg, _seeds(cfg, args.seeds), equal_budget=not args.fixed_rounds, workers=args.workers, progress=log.info)
    out = _run_dir(args, cfg, "-convergence")
    with open(out / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "seed", "round", "grad_norm_sq", "total_loss"])
        for t in result.trajectories:
            for z, (g, loss) in enumerate(zip(t.grad_sq, t.total_loss)):
                w.writerow([repr(t.beta), t.seed, z, repr(float(g)), repr(float(loss))])
    report = result.report()
    (out / "verdict.txt").write_text(report + "\n", encoding="utf-8")
    (out / "config.snapshot").write_text(cfg.to_text(), encoding="utf-8")
    print(report)
    return 0


def cmd_sweep_lengths(args, cfg: ExperimentConfig) -> int:
    result = run_length_sweep(cfg, _seeds(cfg, args.seeds), tuple(args.lengths), True, args.workers, progress=log.info)
    out = _run_dir(args, cfg, "-lengths")
    with open(out / "lengths.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "seed", "client_id", "local_length", "acc"])
        for r in result.rows:
            w.writerow([r["setting"], r["seed"], r["client_id"], r["local_length"], repr(r["acc"])])
    lines = [f"{'setting':<10}{'mean_acc':>10}"] + [f"{s:<10}{result.mean_accuracy(s):>10.4f}" for s in result.settings]
    (out / "lengths.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "checks": cmd_checks,
    "convergence": cmd_convergence,
    "sweep-lengths": cmd_sweep_lengths,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (defaults when omitted)")
    common.add_argument("--out", default="out", help="output root; artifacts go to OUT/<run-name>")
    common.add_argument("--seed", type=int, help="master seed (overrides config and PROMPTFED_SEED)")
    common.add_argument("--workers", type=int, default=1, help="threads for client updates; never changes results")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="promptfed", description="Federated prompt learning with subspace refinement.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="train once and write rounds.csv, summary.txt, timing.csv")
    p = sub.add_parser("ablate", parents=[common], help="baseline / framework / refinement / full grid")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p = sub.add_parser("checks", parents=[common], help="property suites; nonzero exit on failure")
    p.add_argument("--suite", action="append", choices=sorted(checks_mod.SUITES), help="run only these suites")
    p.add_argument("--fault", action="append", choices=sorted(checks_mod.FAULTS), help="inject a known bug")
    p = sub.add_parser("convergence", parents=[common], help="gradient-norm trajectories at beta, beta/2, beta/4")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--fixed-rounds", action="store_true", help="same round count for every beta instead of a fixed beta * rounds budget")
    p = sub.add_parser("sweep-lengths", parents=[common], help="fixed against random local prompt lengths")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--lengths", type=int, nargs="+", default=[4, 8, 16, 32, 64], help="fixed lengths to include")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.seed)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
