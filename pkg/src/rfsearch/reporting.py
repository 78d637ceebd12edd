"""Output file formats: telemetry CSV, sweep CSV, provenance stamps."""

from __future__ import annotations

import math
from typing import Dict, List, Tuple

from .search import SearchReport, SweepCell

FORMAT_VERSION = 1


def fmt(x: float) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    return repr(float(x))


def telemetry_csv(report: SearchReport) -> str:
    lines = ["epoch,mean_train_loss,mean_val_loss,skip_count,wall_seconds"]
    for e in range(len(report.skip_history)):
        lines.append(
            ",".join(
                [
                    str(e),
                    fmt(report.train_loss_history[e]),
                    fmt(report.val_loss_history[e]),
                    str(report.skip_history[e]),
                    fmt(report.wall_history[e]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def sweep_csv(cells: List[SweepCell]) -> str:
    """Per-cell rows plus mean/std aggregate rows per (mu, sigma) setting."""
    lines = ["mu,sigma,seed,final_accuracy,final_skip_count"]
    groups: Dict[Tuple[float, float], List[SweepCell]] = {}
    for c in cells:
        lines.append(
            ",".join([fmt(c.mu), fmt(c.sigma), str(c.seed), fmt(c.final_accuracy), str(c.final_skip_count)])
        )
        groups.setdefault((c.mu, c.sigma), []).append(c)
    for (mu, sigma), grp in groups.items():
        accs = [c.final_accuracy for c in grp if not math.isnan(c.final_accuracy)]
        skips = [c.final_skip_count for c in grp if c.final_skip_count >= 0]
        mean_acc = sum(accs) / len(accs) if accs else float("nan")
        mean_skip = sum(skips) / len(skips) if skips else float("nan")
        if len(accs) > 1:
            var = sum((a - mean_acc) ** 2 for a in accs) / (len(accs) - 1)
            std_acc = math.sqrt(var)
        else:
            std_acc = float("nan")
        if len(skips) > 1:
            svar = sum((s - mean_skip) ** 2 for s in skips) / (len(skips) - 1)
            std_skip = math.sqrt(svar)
        else:
            std_skip = float("nan")
        lines.append(",".join([fmt(mu), fmt(sigma), "mean", fmt(mean_acc), fmt(mean_skip)]))
        lines.append(",".join([fmt(mu), fmt(sigma), "std", fmt(std_acc), fmt(std_skip)]))
    return "\n".join(lines) + "\n"


def metrics_csv(metrics: List[dict]) -> str:
    lines = ["epoch,train_loss,eval_acc"]
    for m in metrics:
        lines.append(",".join([str(m["epoch"]), fmt(m["train_loss"]), fmt(m["eval_acc"])]))
    return "\n".join(lines) + "\n"


def run_stamp(subcommand: str, seed: int) -> str:
    return (
        f"format = rfsearch-run\n"
        f"version = {FORMAT_VERSION}\n"
        f"subcommand = {subcommand}\n"
        f"seed = {seed}\n"
    )
