"""Figures written straight to PNG with the Agg canvas (no display needed)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# keep PNG bytes independent of the installed matplotlib version
_PNG_META = {"Software": None}


def _new(width=5.0, height=3.6):
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    return path


def plot_bias_curve(report, path, title="seen vs unseen accuracy"):
    """Seen accuracy against unseen accuracy along the calibration sweep."""
    fig, ax = _new()
    u = np.asarray(report.curve["unseen"])
    s = np.asarray(report.curve["seen"])
    ax.plot(u, s, drawstyle="steps-post", color="C0")
    ax.fill_between(u, s, step="post", alpha=0.15, color="C0")
    auc = "n/a" if report.auc is None else f"{report.auc:.3f}"
    ax.set_xlabel("unseen accuracy")
    ax.set_ylabel("seen accuracy")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(f"{title}  (AUC {auc}, best HM {report.best_hm:.3f})", fontsize=9)
    return _save(fig, path)


def plot_traces(traces, path):
    """Training loss and validation AUC per epoch, one panel each."""
    fig = Figure(figsize=(8, 3.4), dpi=100)
    FigureCanvasAgg(fig)
    ax_loss, ax_auc = fig.subplots(1, 2)
    for i, tr in enumerate(traces):
        epochs = np.arange(len(tr.val_auc))
        ax_loss.plot(epochs[1:], tr.losses, color=f"C{i}", label=tr.stage)
        ax_auc.plot(epochs, tr.val_auc, color=f"C{i}", label=tr.stage)
        ax_auc.axvline(tr.best_epoch, color=f"C{i}", ls=":", lw=0.8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_auc.set_xlabel("epoch")
    ax_auc.set_ylabel("validation AUC")
    ax_auc.legend(fontsize=8)
    return _save(fig, path)


def plot_sweep(rows, path, metric="hm"):
    """Mean (with min/max band over seeds) of one metric per sweep cell."""
    by_cell = defaultdict(list)
    order = []
    for r in rows:
        if r["metric"] != metric:
            continue
        if r["cell"] not in by_cell:
            order.append(r["cell"])
        by_cell[r["cell"]].append(float(r["value"]))
    fig, ax = _new(max(5.0, 0.6 * len(order) + 2))
    if order:
        x = np.arange(len(order))
        vals = [np.array(by_cell[c]) for c in order]
        mean = np.array([v.mean() for v in vals])
        ax.fill_between(x, [v.min() for v in vals], [v.max() for v in vals], alpha=0.2)
        ax.plot(x, mean, marker="o")
        ax.set_xticks(x)
        ax.set_xticklabels(order, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} per cell (mean, min-max over seeds)", fontsize=9)
    return _save(fig, path)


def plot_imbalance(report, path, title="class count vs mean true-class posterior"):
    fig, ax = _new()
    ax.scatter(report["count"], report["posterior"], s=14)
    rho = report["spearman"]
    ax.set_xlabel("normalised training count")
    ax.set_ylabel("mean posterior of true class")
    ax.set_title(f"{title}  (Spearman {rho:.2f})", fontsize=9)
    return _save(fig, path)
