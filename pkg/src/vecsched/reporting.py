"""Figure rendering for training and adaptation runs.

Figures are a convenience layer over the delimited outputs: the JSONL/CSV
files remain the machine contract, and every figure here is reproducible
from them alone (the `report` subcommand re-renders without re-running).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_training_figure(metrics_path, out_path) -> Path:
    """Held-out AET and losses over updates, from a metrics JSONL stream."""
    records = _read_jsonl(metrics_path)
    out_path = Path(out_path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    series = sorted({r.get("series", "train") for r in records})
    for name in series:
        rows = [r for r in records if r.get("series", "train") == name]
        updates = [r["update"] for r in rows]
        axes[0].plot(updates, [r["mean_AET"] for r in rows], label=name)
        axes[1].plot(updates, [r["actor_loss"] for r in rows], label=f"{name} actor")
        axes[1].plot(
            updates, [r["critic_loss"] for r in rows], linestyle="--", label=f"{name} critic"
        )
    axes[0].set_xlabel("update")
    axes[0].set_ylabel("held-out AET (s)")
    axes[0].set_title("Convergence")
    axes[1].set_xlabel("update")
    axes[1].set_ylabel("loss")
    axes[1].set_title("Losses")
    for ax in axes:
        ax.grid(True, alpha=0.3)
        if len(series) > 1 or ax is axes[1]:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_adaptation_figure(csv_path, out_path) -> Path:
    """One panel per sweep family: AET versus adaptation step per variant."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    families = sorted({r["family"] for r in rows})
    out_path = Path(out_path)
    cols = min(4, max(1, len(families)))
    nrows = (len(families) + cols - 1) // cols
    fig, axes = plt.subplots(nrows, cols, figsize=(3.2 * cols, 2.8 * nrows), squeeze=False)
    for i, family in enumerate(families):
        ax = axes[i // cols][i % cols]
        fam_rows = [r for r in rows if r["family"] == family]
        for variant in sorted({r["variant"] for r in fam_rows}):
            pts = sorted(
                (int(r["step"]), float(r["mean_aet"])) for r in fam_rows if r["variant"] == variant
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3, label=variant)
        ax.set_title(family, fontsize=9)
        ax.set_xlabel("adaptation step")
        ax.set_ylabel("AET (s)")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=6)
    for j in range(len(families), nrows * cols):
        axes[j // cols][j % cols].axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def _read_jsonl(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
