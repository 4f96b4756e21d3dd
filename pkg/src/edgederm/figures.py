"""Matplotlib figure rendering for reports (written next to the CSV output).

Figures are drawn straight onto Agg canvases so no interactive backend or
pyplot global state is involved.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .training import EpochRecord


def save_curve_figure(records: list[EpochRecord], path) -> Path:
    """Accuracy and loss vs epoch, train and validation series."""
    epochs = [r.epoch for r in records]
    fig = Figure(figsize=(9, 4))
    FigureCanvasAgg(fig)
    ax_acc, ax_loss = fig.subplots(1, 2)

    ax_acc.plot(epochs, [r.train_acc for r in records], marker="o", label="train")
    if any(r.val_acc is not None for r in records):
        ax_acc.plot(epochs, [r.val_acc for r in records], marker="s", label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_title("Model accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.legend()

    ax_loss.plot(epochs, [r.train_loss for r in records], marker="o", label="train")
    if any(r.val_loss is not None for r in records):
        ax_loss.plot(epochs, [r.val_loss for r in records], marker="s", label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("Model loss")
    ax_loss.legend()

    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    return path


def save_confusion_figure(cm: np.ndarray, labels, path) -> Path:
    """Annotated confusion-matrix heatmap."""
    fig = Figure(figsize=(7, 6))
    FigureCanvasAgg(fig)
    ax = fig.subplots()
    im = ax.imshow(cm, cmap="Blues")
    fig.colorbar(im, ax=ax, fraction=0.046)
    n = len(labels)
    ax.set_xticks(range(n), labels, rotation=45, ha="right")
    ax.set_yticks(range(n), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = cm.max() / 2 if cm.max() else 0.5
    for i in range(n):
        for j in range(n):
            color = "white" if cm[i, j] > threshold else "black"
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center", color=color, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    return path
