"""Figure rendering for coverage and accuracy reports.

Every report command writes a PNG next to its JSON and text-table outputs.
Rendering is headless (Agg backend) and never required by the library path.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

logger = logging.getLogger(__name__)

_BAR_COLOR = "#4878a8"
_DELTA_POS = "#3a7d44"
_DELTA_NEG = "#b3484d"


def save_coverage_figure(report, path: str | Path) -> Path:
    """Bar chart of cumulative validated-rationale coverage per stage."""
    path = Path(path)
    stages = [row.stage for row in report.rows]
    percentages = [row.percentage for row in report.rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    bars = ax.bar(stages, percentages, color=_BAR_COLOR)
    ax.set_ylabel("Training coverage (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Validated rationale coverage by stage")
    ax.bar_label(bars, fmt="%.2f")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("wrote coverage figure %s", path)
    return path


def save_eval_figure(report, path: str | Path) -> Path:
    """Bar chart of execution accuracy per difficulty category plus total."""
    path = Path(path)
    labels = [c.category for c in report.categories] + ["total"]
    values = [c.accuracy for c in report.categories] + [report.total.accuracy]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    bars = ax.bar(labels, values, color=_BAR_COLOR)
    ax.set_ylabel("Execution accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Execution accuracy by difficulty")
    ax.bar_label(bars, fmt="%.2f")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("wrote accuracy figure %s", path)
    return path


def save_diff_figure(diff, path: str | Path) -> Path:
    """Signed per-category accuracy deltas between two eval reports."""
    path = Path(path)
    labels = [d.category for d in diff.deltas] + ["total"]
    values = [d.delta for d in diff.deltas] + [diff.total_delta]
    colors = [_DELTA_POS if v >= 0 else _DELTA_NEG for v in values]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    bars = ax.bar(labels, values, color=colors)
    ax.axhline(0, color="black", linewidth=0.8)
    ax.set_ylabel("Accuracy delta (pp)")
    ax.set_title("Execution accuracy change")
    ax.bar_label(bars, fmt="%+.2f")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("wrote delta figure %s", path)
    return path
