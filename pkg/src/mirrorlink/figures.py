"""Matplotlib renderings for the report path (PNG files next to the JSON)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def render_heatmap(grid, out_path: str | Path) -> Path:
    """Success-rate heatmap over the spawn region; unsampled bins hatched."""
    out_path = Path(out_path)
    rates = grid.rates()
    fig, ax = plt.subplots(figsize=(5, 4.2))
    masked = np.ma.masked_invalid(rates.T)
    cmap = plt.get_cmap("gray").copy()
    cmap.set_bad("#4040a0")
    mesh = ax.pcolormesh(
        grid.x_edges, grid.y_edges, masked, cmap=cmap, vmin=0.0, vmax=1.0
    )
    fig.colorbar(mesh, ax=ax, label="success rate")
    for i in range(grid.trials.shape[0]):
        for j in range(grid.trials.shape[1]):
            if grid.trials[i, j] > 0:
                ax.text(
                    0.5 * (grid.x_edges[i] + grid.x_edges[i + 1]),
                    0.5 * (grid.y_edges[j] + grid.y_edges[j + 1]),
                    str(grid.trials[i, j]),
                    ha="center",
                    va="center",
                    fontsize=7,
                    color="#cc3333",
                )
    ax.set_xlabel("spawn x (m)")
    ax.set_ylabel("spawn y (m)")
    ax.set_title(f"{grid.task_id}: success by spawn position")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_rates(report, out_path: str | Path) -> Path:
    """Bar chart of per-task rates with the average drawn as a line."""
    from .evaluation import TASK_DISPLAY

    out_path = Path(out_path)
    names, values = [], []
    for task_id, display in TASK_DISPLAY:
        if task_id in report.tasks:
            names.append(display)
            values.append(report.tasks[task_id]["rate"])
    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(range(len(names)), values, color="#5577aa")
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.axhline(report.average_rate, color="#aa4444", linestyle="--", linewidth=1)
    ax.text(
        len(names) - 0.5,
        report.average_rate + 1.5,
        f"avg {report.average_rate:.2f}",
        color="#aa4444",
        fontsize=8,
        ha="right",
    )
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 105)
    ax.set_ylabel("success rate (%)")
    ax.set_title(f"Task success rates ({report.policy})")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
