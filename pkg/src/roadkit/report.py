"""Figure rendering for dataset stats, evaluation curves, and latency.

Every function writes one PNG next to the delimited outputs and returns
the path it wrote.  The non-interactive backend is forced so rendering
works in headless runs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .annotations import DistributionReport
from .metrics import PRCurve
from .orchestrator import LatencyReport
from .types import DamageClass


def save_distribution_figure(report: DistributionReport, path: str | Path) -> Path:
    """Grouped bar chart of label counts per folder and class."""
    folders, series = report.histogram_data()
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(folders)), 4.5))
    x = np.arange(len(folders))
    width = 0.8 / len(series)
    for i, (name, counts) in enumerate(series.items()):
        ax.bar(x + (i - (len(series) - 1) / 2) * width, counts, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(folders, rotation=20, ha="right")
    ax.set_ylabel("labels")
    ax.set_title("Damage label distribution")
    ax.legend(title="class")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def save_f1_sweep_figure(
    points: Sequence[tuple[float, float]],
    path: str | Path,
    best: tuple[float, float] | None = None,
) -> Path:
    """F1 as a function of the confidence threshold, best point marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if points:
        xs, ys = zip(*points)
        ax.plot(xs, ys, lw=1.5)
    if best is not None:
        ax.plot([best[0]], [best[1]], "o", color="crimson")
        ax.annotate(
            f"best F1 {best[1]:.4f} @ {best[0]:.3f}",
            xy=best,
            xytext=(best[0], min(1.0, best[1] + 0.08)),
            ha="center",
            fontsize=9,
        )
    ax.set_xlabel("confidence threshold")
    ax.set_ylabel("F1")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_title("F1 sweep")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def save_pr_figure(curves: Mapping[DamageClass, PRCurve], path: str | Path) -> Path:
    """One precision/recall staircase per class on shared axes."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for cls in sorted(curves):
        curve = curves[cls]
        if curve.recall:
            recall = (0.0,) + curve.recall
            precision = (curve.precision[0],) + curve.precision
            ax.step(recall, precision, where="post", label=cls.name)
        else:
            ax.plot([], [], label=f"{cls.name} (no detections)")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Precision/recall at IoU 0.5")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def save_latency_figure(report: LatencyReport, path: str | Path) -> Path:
    """Mean stage cost and the spread of per-image totals."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    stages = ("preprocess", "inference", "postprocess")
    left.bar(stages, [report.mean_ms(s) for s in stages], color=["#4c72b0", "#dd8452", "#55a868"])
    left.set_ylabel("mean ms per image")
    left.set_title("Stage cost")
    totals = [r.total_ms for r in report.rows]
    if totals:
        right.hist(totals, bins=min(30, max(5, len(totals) // 4)), color="#4c72b0")
    right.set_xlabel("total ms per image")
    right.set_ylabel("images")
    right.set_title(f"Per-image latency ({report.runs} run(s))")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
