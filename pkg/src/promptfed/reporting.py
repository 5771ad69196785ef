"""Run artifacts: per-round CSV, summary recomputed from that CSV, timing table.

``rounds.csv`` must be byte-identical across reruns and worker counts, so it
only holds deterministic quantities. Wall-clock measurements go to
``timing.csv``; the ``refine_ms_fraction`` column of ``rounds.csv`` is kept for
the fixed schema and always reads ``nan``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .federation import RoundReport

ROUND_COLUMNS = (
    "round",
    "client_id",
    "acc",
    "ce_local",
    "ce_global",
    "str",
    "sep",
    "total",
    "grad_norm_global",
    "refine_ms_fraction",
)
AGGREGATE_ID = -1
SUMMARY_WINDOW = 10


def _num(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def round_rows(report: RoundReport) -> list[list[str]]:
    """Per-client rows (ascending id) followed by the aggregate row."""
    rows = []
    nan = float("nan")
    for cid in sorted(report.accuracy):
        loss = report.client_losses.get(cid)
        parts = (nan,) * 5 if loss is None else (loss.ce_local, loss.ce_global, loss.str, loss.sep, loss.total)
        rows.append(
            [str(report.round), str(cid), _num(report.accuracy[cid]), *map(_num, parts),
             _num(report.client_grad_norms[cid]), "nan"]
        )
    agg = report.losses
    rows.append(
        [str(report.round), str(AGGREGATE_ID), _num(report.mean_accuracy),
         *map(_num, (agg.ce_local, agg.ce_global, agg.str, agg.sep, agg.total)),
         _num(report.global_grad_norm), "nan"]
    )
    return rows


def write_rounds_csv(history: list[RoundReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for report in history:
            w.writerows(round_rows(report))


def write_timing_csv(history: list[RoundReport], path) -> float:
    """Per-round wall time split; returns the overall refinement fraction."""
    total_round = sum(r.round_seconds for r in history)
    total_refine = sum(r.refine_seconds for r in history)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "round_seconds", "refine_seconds", "refine_fraction"])
        for r in history:
            w.writerow([r.round, f"{r.round_seconds:.6f}", f"{r.refine_seconds:.6f}", f"{r.refinement_time_fraction:.6f}"])
        overall = total_refine / total_round if total_round > 0 else 0.0
        w.writerow(["all", f"{total_round:.6f}", f"{total_refine:.6f}", f"{overall:.6f}"])
    return overall


@dataclass(frozen=True)
class Summary:
    rounds: int
    window: int
    mean_accuracy: float
    std_accuracy: float
    final_grad_norm: float

    def to_text(self) -> str:
        return (
            f"rounds = {self.rounds}\n"
            f"window = {self.window}\n"
            f"mean_accuracy = {self.mean_accuracy!r}\n"
            f"std_accuracy = {self.std_accuracy!r}\n"
            f"final_grad_norm_global = {self.final_grad_norm!r}\n"
        )


def read_aggregate_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROUND_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [row for row in reader if int(row["client_id"]) == AGGREGATE_ID]


def summarize_csv(path, window: int = SUMMARY_WINDOW) -> Summary:
    """Mean and std of the aggregate accuracy over the last ``window`` rounds, from the CSV alone."""
    rows = read_aggregate_rows(path)
    if not rows:
        nan = float("nan")
        return Summary(0, window, nan, nan, nan)
    acc = np.array([float(r["acc"]) for r in rows[-window:]])
    return Summary(len(rows), min(window, len(rows)), float(acc.mean()), float(acc.std()), float(rows[-1]["grad_norm_global"]))


def write_run_artifacts(cfg: ExperimentConfig, history: list[RoundReport], out_dir) -> dict[str, Path]:
    """Write ``config.snapshot``, ``rounds.csv``, ``summary.txt`` and ``timing.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("config.snapshot", "rounds.csv", "summary.txt", "timing.csv")}
    paths["config.snapshot"].write_text(cfg.to_text(), encoding="utf-8")
    write_rounds_csv(history, paths["rounds.csv"])
    paths["summary.txt"].write_text(summarize_csv(paths["rounds.csv"]).to_text(), encoding="utf-8")
    write_timing_csv(history, paths["timing.csv"])
    return paths
