"""Report-length distribution figure rendering."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import LENGTH_BIN_WIDTH


def write_length_table(rows, path) -> None:
    """rows: (bin_lo, p_gen, p_gt) triples -> delimited table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_lo", "p_gen", "p_gt"])
        for bin_lo, p_gen, p_gt in rows:
            writer.writerow([bin_lo, f"{p_gen:.9f}", f"{p_gt:.9f}"])


def read_length_table(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return [(int(r["bin_lo"]), float(r["p_gen"]), float(r["p_gt"])) for r in reader]


def plot_length_distributions(rows, kl: float, out_path) -> Path:
    """Render smoothed length histograms of generated vs reference reports."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    bins = [r[0] + LENGTH_BIN_WIDTH / 2 for r in rows]
    p_gen = [r[1] for r in rows]
    p_gt = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([b - 1.5 for b in bins], p_gen, width=3.0, label="generated", color="#4878d0")
    ax.bar([b + 1.5 for b in bins], p_gt, width=3.0, label="reference", color="#ee854a")
    ax.set_xlabel("report length (tokens)")
    ax.set_ylabel("probability")
    ax.set_title(f"Report length distributions (KL = {kl:.4g} nats)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
