"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "mtnam",
}
DEPTH_COLORS = {1: "tab:blue", 2: "tab:red", 4: "tab:green"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Drop the creation date so reruns write identical files.
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else {"Date": None})
    plt.close(fig)
    return path


def plot_feature_functions(teacher, students: dict, X: np.ndarray, features: Sequence[int], path,
                           labels: Sequence[str] | None = None) -> Path:
    """Teacher feature functions against their tree approximations.

    One panel per feature; the gray histogram shows where training inputs lie.
    """
    with plt.rc_context(RC):
        n = len(features)
        fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 2.8), squeeze=False)
        for ax, j in zip(axes[0], features):
            z = X[:, j]
            lo, hi = float(z.min()), float(z.max())
            pad = 0.05 * (hi - lo or 1.0)
            grid = np.linspace(lo - pad, hi + pad, 400)
            probe = np.zeros((grid.size, teacher.M))
            probe[:, j] = grid
            dens = ax.twinx()
            dens.hist(z, bins=40, color="0.85", zorder=0)
            dens.set_yticks([])
            ax.set_zorder(dens.get_zorder() + 1)
            ax.patch.set_visible(False)
            ax.plot(grid, teacher.contributions(probe)[:, j], color="tab:orange", label="NAM")
            for depth, student in sorted(students.items()):
                ax.step(grid, student.contributions(probe)[:, j], where="mid",
                        color=DEPTH_COLORS.get(depth, None), label=f"MT{depth}", linewidth=0.9)
            ax.set_title(labels[j] if labels is not None else f"feature {j}")
            ax.set_xlabel("standardized input")
        axes[0][0].set_ylabel("contribution")
        axes[0][-1].legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)


def plot_flops(names: Sequence[str], flops: Sequence[int], path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(names)), 3.0))
        ax.bar(range(len(names)), flops, color="tab:blue")
        ax.set_yscale("log")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("FLOPs per window")
        fig.tight_layout()
        return _save(fig, path)


def plot_latency(names: Sequence[str], mean_us: Sequence[float], std_us: Sequence[float], path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(names)), 3.0))
        ax.bar(range(len(names)), mean_us, yerr=std_us, color="tab:gray", capsize=2)
        ax.set_yscale("log")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("latency per window (us)")
        fig.tight_layout()
        return _save(fig, path)
