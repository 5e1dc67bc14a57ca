"""Figures for evaluation reports (PNG files via the non-interactive Agg backend)."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .corpus import LABEL_NAMES  # noqa: E402
from .evaluation import EvalReport  # noqa: E402
from .io import atomic_write_bytes  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    buf = io.BytesIO()
    # dropping the Software tag keeps repeated renders byte-identical
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return path


def plot_confusion(report: EvalReport, path: str | Path) -> Path:
    cm = np.asarray(report.confusion_total, dtype=float)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    ax.imshow(cm, cmap="Blues")
    names = [LABEL_NAMES[i] for i in range(3)]
    ax.set_xticks(range(3), names, rotation=20)
    ax.set_yticks(range(3), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"{report.name}: summed over {len(report.per_fold)} folds", fontsize=9)
    hi = cm.max() if cm.size else 0
    for i in range(3):
        for j in range(3):
            ax.text(j, i, int(cm[i, j]), ha="center", va="center", color="white" if cm[i, j] > hi / 2 else "black")
    return _save(fig, path)


def plot_macro_f1(reports: Sequence[EvalReport], path: str | Path) -> Path:
    """Bar chart of mean macro-F1 with population-std error bars, one bar per report."""
    names = [r.name for r in reports]
    means = [r.mean_macro_f1 for r in reports]
    stds = [r.std_macro_f1 for r in reports]
    fig, ax = plt.subplots(figsize=(max(3.5, 1.3 * len(reports) + 1.5), 3.4))
    ax.bar(range(len(reports)), means, yerr=stds, capsize=4, color="#4c72b0")
    ax.set_xticks(range(len(reports)), names, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("macro-F1 (mean ± std)")
    for x, m in enumerate(means):
        ax.text(x, min(m + 0.03, 1.0), f"{m:.3f}", ha="center", fontsize=8)
    return _save(fig, path)
