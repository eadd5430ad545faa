"""Figure rendering for the report paths.

Every CSV the pipeline writes gets a companion PNG: training loss
curves, per-threshold score bars, ablation sweep curves, and truth/
prediction class panels.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap

CLASS_COLORS = ListedColormap(["#ffffff", "#4a90d9", "#d0342c"])


def loss_curve(epoch_losses: list[float], path: str | Path, title: str) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(epoch_losses) + 1), epoch_losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def score_bars(
    threshold_scores: dict[float, dict[str, float]],
    miou_value: float,
    path: str | Path,
) -> Path:
    path = Path(path)
    names = ["csi", "f1", "precision", "recall"]
    taus = sorted(threshold_scores)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    width = 0.8 / max(len(taus), 1)
    xs = np.arange(len(names))
    for i, tau in enumerate(taus):
        vals = [threshold_scores[tau][n] for n in names]
        ax.bar(xs + i * width, vals, width, label=f"$\\tau$ = {tau} mm")
    ax.axhline(miou_value, color="k", ls="--", lw=1, label=f"mIoU = {miou_value:.3f}")
    ax.set_xticks(xs + width * (len(taus) - 1) / 2)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def class_panels(
    obs_classes: np.ndarray,
    pred_classes: np.ndarray,
    path: str | Path,
    n_classes: int = 3,
) -> Path:
    """Side-by-side truth and predicted class maps for one sample."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(6.4, 3.2))
    for ax, field, title in zip(axes, (obs_classes, pred_classes), ("truth", "predicted")):
        ax.imshow(field, cmap=CLASS_COLORS, vmin=0, vmax=n_classes - 1,
                  interpolation="nearest")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def ablation_curves(
    rows: list[dict],
    param_keys: list[str],
    path_prefix: str | Path,
    metrics: tuple[str, ...] = ("csi_0.1", "csi_10", "miou"),
) -> list[Path]:
    """One figure per swept parameter: metric curves versus its values."""
    out = []
    prefix = Path(path_prefix)
    ok_rows = [r for r in rows if not r.get("error")]
    for key in param_keys:
        values = sorted({r[key] for r in ok_rows})
        if len(values) < 2:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for metric in metrics:
            ys = []
            for v in values:
                group = [float(r[metric]) for r in ok_rows if r[key] == v]
                ys.append(np.mean(group))
            ax.plot(values, ys, marker="o", ms=4, label=metric)
        ax.set_xlabel(key)
        ax.set_ylabel("score")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig_path = prefix.with_name(
            f"{prefix.name}_{key.replace('.', '_')}.png"
        )
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)
        out.append(fig_path)
    return out


def proportions_bars(
    one_hot_fracs: np.ndarray, density_fracs: np.ndarray, path: str | Path
) -> Path:
    path = Path(path)
    n = len(one_hot_fracs)
    xs = np.arange(n)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(xs - 0.2, one_hot_fracs, 0.4, label="one-hot")
    ax.bar(xs + 0.2, density_fracs, 0.4, label="density")
    ax.set_yscale("log")
    ax.set_xticks(xs)
    ax.set_xticklabels([f"class {i}" for i in range(n)])
    ax.set_ylabel("mass fraction")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
