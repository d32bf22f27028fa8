"""SVG figures: training curves and attention heatmap grids."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

# Fixed ids and no timestamp keep SVG output byte-stable across runs.
matplotlib.rcParams["svg.hashsalt"] = "ontotrain"
matplotlib.rcParams["svg.fonttype"] = "none"

METRIC_LABELS = {
    "val_f1_micro": "F1 score (micro)",
    "val_rocauc_macro": "ROC-AUC (macro)",
    "loss": "training loss",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_curves(curves: Mapping[str, Sequence], metric: str, out_path: str | Path, threshold: float | None = None) -> Path:
    """One line per entry of ``curves`` (label -> list of EpochLog)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (label, logs) in enumerate(curves.items()):
        xs = [entry.epoch for entry in logs]
        ys = [getattr(entry, metric) for entry in logs]
        ys = [math.nan if y is None else y for y in ys]
        (line,) = ax.plot(xs, ys, label=label, linewidth=1.4)
        line.set_gid(f"curve-{i}")
    if threshold is not None and metric != "loss":
        ax.axhline(threshold, color="0.6", linestyle=":", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel(METRIC_LABELS.get(metric, metric))
    ax.legend(fontsize="small", frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_attention_layer(weights: np.ndarray, tokens: Sequence[str], title: str, out_path: str | Path) -> Path:
    """Grid of per-head heatmaps for one layer; ``weights`` has shape (heads, n, n).

    Every cell is its own rectangle tagged ``cell-<head>-<query>-<key>``.
    """
    heads, n, _ = weights.shape
    cols = min(heads, 4)
    rows = math.ceil(heads / cols)
    size = max(2.0, 0.18 * n + 0.8)
    fig, axes = plt.subplots(rows, cols, figsize=(cols * size, rows * size + 0.4), squeeze=False)
    cmap = plt.get_cmap("Greens")
    for h in range(rows * cols):
        ax = axes[h // cols][h % cols]
        if h >= heads:
            ax.axis("off")
            continue
        for q in range(n):
            for k in range(n):
                cell = Rectangle((k, q), 1, 1, facecolor=cmap(float(weights[h, q, k])), edgecolor="none")
                cell.set_gid(f"cell-{h}-{q}-{k}")
                ax.add_patch(cell)
        ax.set_xlim(0, n)
        ax.set_ylim(n, 0)
        ax.set_aspect("equal")
        ax.set_title(f"head {h + 1}", fontsize=8)
        ticks = np.arange(n) + 0.5
        ax.set_xticks(ticks, tokens, rotation=90, fontsize=6)
        ax.set_yticks(ticks, tokens, fontsize=6)
        ax.tick_params(length=0)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, out_path)
