"""Multi-run studies behind the CLI: ablation grid, step-size convergence sweep, prompt-length sweep."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .experiment import VARIANTS, build_experiment, variant_config

LAST_ROUNDS = 10


def last_rounds_accuracy(history, window: int = LAST_ROUNDS) -> float:
    tail = history[-window:]
    return float(np.mean([r.mean_accuracy for r in tail])) if tail else float("nan")


def partition_digest(experiment) -> str:
    """Hash of every client's train/test labels and features, for the shared-data audit."""
    h = hashlib.sha256()
    for shard in experiment.shards:
        for part in (shard.train, shard.test):
            h.update(np.ascontiguousarray(part.y).tobytes())
            h.update(np.ascontiguousarray(part.x).tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------- ablation


@dataclass
class AblationResult:
    seeds: list[int]
    accuracy: dict[str, list[float]]  # variant -> per-seed last-10-round accuracy
    digests: dict[int, set[str]] = field(default_factory=dict)  # seed -> partition digests seen

    def mean(self, variant: str) -> float:
        return float(np.mean(self.accuracy[variant]))

    def std(self, variant: str) -> float:
        return float(np.std(self.accuracy[variant]))

    @property
    def ranking(self) -> list[str]:
        return sorted(self.accuracy, key=self.mean, reverse=True)

    @property
    def shared_partitions(self) -> bool:
        return all(len(d) == 1 for d in self.digests.values())

    def table(self) -> str:
        lines = [f"{'rank':<5}{'variant':<12}{'mean_acc':>10}{'std':>9}  per-seed"]
        for i, v in enumerate(self.ranking, start=1):
            per_seed = " ".join(f"{a:.4f}" for a in self.accuracy[v])
            lines.append(f"{i:<5}{v:<12}{self.mean(v):>10.4f}{self.std(v):>9.4f}  {per_seed}")
        lines.append(f"identical partitions across variants: {'yes' if self.shared_partitions else 'NO'}")
        return "\n".join(lines)


def run_ablation(cfg: ExperimentConfig, seeds, workers: int = 1, variants=VARIANTS, progress=None) -> AblationResult:
    seeds = list(seeds)
    result = AblationResult(seeds, {v: [] for v in variants})
    for seed in seeds:
        result.digests[seed] = set()
        for variant in variants:
            exp = build_experiment(variant_config(cfg.replace(seed=seed), variant))
            result.digests[seed].add(partition_digest(exp))
            exp.run(workers=workers)
            acc = last_rounds_accuracy(exp.server.history)
            result.accuracy[variant].append(acc)
            if progress:
                progress(f"seed {seed} {variant:<11} acc {acc:.4f}")
    return result


# ------------------------------------------------------------- convergence


@dataclass
class Trajectory:
    beta: float
    seed: int
    grad_sq: np.ndarray  # ||grad_{G_s} F||_F^2 at the start of each round
    total_loss: np.ndarray  # mean training loss of each round
    error: str = ""

    def window(self) -> int:
        return max(1, len(self.grad_sq) // 5)

    @property
    def head(self) -> float:
        return float(np.mean(self.grad_sq[: self.window()]))

    @property
    def tail(self) -> float:
        return float(np.mean(self.grad_sq[-self.window() :]))

    @property
    def ratio(self) -> float:
        return self.tail / self.head if self.head > 0 else float("nan")

    @property
    def status(self) -> str:
        if self.error or not np.all(np.isfinite(self.grad_sq)) or not np.all(np.isfinite(self.total_loss)):
            return "diverged"
        if self.beta == 0:
            return "no-op"
        if self.ratio <= CONVERGED_RATIO:
            return "converged"
        w = self.window()
        if self.tail >= self.head or np.mean(self.total_loss[-w:]) > np.mean(self.total_loss[:w]):
            return "diverged"
        return "stalled"


CONVERGED_RATIO = 0.25


@dataclass
class ConvergenceResult:
    betas: list[float]
    trajectories: list[Trajectory]

    def for_beta(self, beta: float) -> list[Trajectory]:
        return [t for t in self.trajectories if t.beta == beta]

    def plateau(self, beta: float) -> float:
        return float(np.mean([t.tail for t in self.for_beta(beta)]))

    @property
    def verdict_a(self) -> str:
        """'pass', 'fail' or 'no-op' for the tail <= 25% of head test over every trajectory."""
        statuses = {t.status for t in self.trajectories}
        if statuses == {"no-op"}:
            return "no-op"
        return "pass" if statuses <= {"converged", "no-op"} else "fail"

    @property
    def verdict_b(self) -> str:
        """Plateau must not rise as the step size is halved (betas listed largest first)."""
        if all(b == 0 for b in self.betas):
            return "no-op"
        levels = [self.plateau(b) for b in self.betas]
        ok = all(np.isfinite(levels)) and all(nxt <= prev for prev, nxt in zip(levels, levels[1:]))
        return "pass" if ok else "fail"

    def report(self) -> str:
        lines = [f"{'beta':>10}{'rounds':>8}{'plateau':>14}{'max ratio':>11}  statuses"]
        for b in self.betas:
            ts = self.for_beta(b)
            ratios = [t.ratio for t in ts]
            lines.append(
                f"{b:>10.4g}{len(ts[0].grad_sq):>8}{self.plateau(b):>14.4e}{np.nanmax(ratios) if ratios else math.nan:>11.4f}  "
                + ",".join(t.status for t in ts)
            )
        lines.append(f"verdict (a) tail <= {CONVERGED_RATIO:.0%} of head on every run: {self.verdict_a}")
        lines.append(f"verdict (b) plateau non-increasing as beta is halved: {self.verdict_b}")
        return "\n".join(lines)


def convergence_betas(beta0: float) -> list[float]:
    return [beta0, beta0 / 2, beta0 / 4]


def run_convergence(
    cfg: ExperimentConfig,
    seeds,
    betas=None,
    equal_budget: bool = True,
    workers: int = 1,
    progress=None,
) -> ConvergenceResult:
    """Train at each step size and record the global-prompt gradient trajectory.

    With ``equal_budget`` the round count scales as beta0 / beta so every run
    covers the same total step length; the plateau then compares noise
    floors rather than how far a slower run got in a fixed number of rounds.
    """
    betas = convergence_betas(cfg.beta) if betas is None else list(betas)
    beta0 = betas[0]
    trajectories = []
    for beta in betas:
        rounds = cfg.rounds
        if equal_budget and beta > 0 and beta0 > 0:
            rounds = int(round(cfg.rounds * beta0 / beta))
        for seed in seeds:
            exp = build_experiment(cfg.replace(beta=beta, seed=seed, rounds=rounds))
            error = ""
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    exp.run(workers=workers)
                except (ValueError, FloatingPointError, ArithmeticError) as exc:
                    error = f"{type(exc).__name__}: {exc}"
            hist = exp.server.history
            traj = Trajectory(
                beta,
                seed,
                np.array([r.global_grad_norm**2 for r in hist]),
                np.array([r.losses.total for r in hist]),
                error,
            )
            trajectories.append(traj)
            if progress:
                progress(f"beta {beta:.4g} seed {seed} rounds {len(hist)} ratio {traj.ratio:.4f} {traj.status}")
    return ConvergenceResult(betas, trajectories)


# ------------------------------------------------------------ length sweep


@dataclass
class LengthSweepResult:
    rows: list[dict]  # one per (setting, seed, client)

    def mean_accuracy(self, setting: str) -> float:
        per_seed = {}
        for r in self.rows:
            if r["setting"] == setting:
                per_seed.setdefault(r["seed"], []).append(r["acc"])
        return float(np.mean([np.mean(v) for v in per_seed.values()]))

    @property
    def settings(self) -> list[str]:
        return list(dict.fromkeys(r["setting"] for r in self.rows))


def client_last_accuracy(history, client_id: int, window: int = LAST_ROUNDS) -> float:
    return float(np.mean([r.accuracy[client_id] for r in history[-window:]]))


def run_length_sweep(
    cfg: ExperimentConfig, seeds, fixed_lengths=(8,), include_random: bool = True, workers: int = 1, progress=None
) -> LengthSweepResult:
    """Fixed local prompt lengths against per-client uniform random lengths."""
    settings = [(f"fixed-{s}", cfg.replace(local_length_mode="fixed", local_length=s)) for s in fixed_lengths]
    if include_random:
        settings.append(("random", cfg.replace(local_length_mode="uniform_random")))
    rows = []
    for seed in seeds:
        for name, scfg in settings:
            exp = build_experiment(scfg.replace(seed=seed))
            exp.run(workers=workers)
            for client in exp.clients:
                rows.append(
                    dict(
                        setting=name,
                        seed=seed,
                        client_id=client.id,
                        local_length=client.local_length,
                        acc=client_last_accuracy(exp.server.history, client.id),
                    )
                )
            if progress:
                progress(f"seed {seed} {name:<9} acc {last_rounds_accuracy(exp.server.history):.4f}")
    return LengthSweepResult(rows)
