"""Report figures. Always rendered with the Agg backend straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({"font.size": 9, "axes.spines.top": False, "axes.spines.right": False,
                     "figure.dpi": 100, "savefig.bbox": "tight"})


def scenario_label(mask) -> str:
    return "".join(str(int(v)) for v in mask)


def plot_history(history, path: Path) -> Path:
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.plot(epochs, [r.train_loss for r in history], label="train")
    val = [r.val_loss for r in history]
    if not np.all(np.isnan(val)):
        ax.plot(epochs, val, label="val (full mask)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("BCE")
    ax.legend(frameon=False)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_scenarios(report, path: Path) -> Path:
    labels = [scenario_label(r.mask) for r in report.rows]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(3.5, 0.7 * len(labels) + 1.5), 3))
    ax.bar(x - 0.2, [r.iou_mean for r in report.rows], 0.4, yerr=[r.iou_std for r in report.rows],
           label="IoU", capsize=2)
    ax.bar(x + 0.2, [r.f1_mean for r in report.rows], 0.4, yerr=[r.f1_std for r in report.rows],
           label="F1", capsize=2)
    ax.set_xticks(x, labels)
    ax.set_xlabel("available modalities")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, ncol=2)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_infogap(gap, path: Path) -> Path:
    labels = [scenario_label(s) for s in gap.scenarios]
    colors = ["tab:green" if g > 0 else "tab:red" for g in gap.gaps]
    fig, ax = plt.subplots(figsize=(max(3.5, 0.6 * len(labels) + 1.5), 3))
    ax.bar(labels, gap.gaps, color=colors)
    ax.axhline(0, color="k", lw=0.8)
    ax.set_ylabel("information gap (nats)")
    ax.set_xlabel("available modalities")
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
