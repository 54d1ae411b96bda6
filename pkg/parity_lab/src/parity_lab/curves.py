"""Accuracy-versus-length curves from grid results."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .config import REGIMES

LABELS = {
    "causal_instant": "instant answer, causal mask",
    "noncausal_instant": "instant answer, no mask",
    "causal_pause": "pause tokens, causal mask",
}


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "regime": row["regime"],
                "length": int(row["length"]),
                "seed": int(row["seed"]),
                "test_accuracy": float(row["test_accuracy"]),
            }
            for row in csv.DictReader(fh)
        ]


def mean_accuracies(rows: list[dict]) -> dict[tuple[str, int], float]:
    """Mean test accuracy over seeds per (regime, length)."""
    acc = defaultdict(list)
    for row in rows:
        acc[(row["regime"], row["length"])].append(row["test_accuracy"])
    return {key: sum(v) / len(v) for key, v in acc.items()}


def emit_curves(results_path: str | Path, out_dir: str | Path) -> tuple[str, str]:
    """Write the plot image and the mean-accuracy table; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_results(results_path)
    means = mean_accuracies(rows)
    lengths = sorted({l for _, l in means})

    table_path = out / "curves.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["regime", "length", "mean_test_accuracy", "seeds"])
        counts = defaultdict(int)
        for row in rows:
            counts[(row["regime"], row["length"])] += 1
        for regime in REGIMES:
            for length in lengths:
                if (regime, length) in means:
                    writer.writerow(
                        [regime, length, f"{means[(regime, length)]:.4f}",
                         counts[(regime, length)]]
                    )

    fig, ax = plt.subplots(figsize=(6, 4))
    for regime in REGIMES:
        xs = [l for l in lengths if (regime, l) in means]
        if not xs:
            continue
        ax.plot(xs, [means[(regime, l)] for l in xs], marker="o",
                label=LABELS[regime])
    ax.axhline(0.5, color="grey", linestyle=":", linewidth=1)
    ax.set_xlabel("sequence length")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.4, 1.02)
    ax.legend()
    fig.tight_layout()
    plot_path = out / "curves.png"
    fig.savefig(plot_path, dpi=150)
    plt.close(fig)
    return str(plot_path), str(table_path)
