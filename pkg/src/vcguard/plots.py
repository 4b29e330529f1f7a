"""Matplotlib renderers for harness outputs.

Used by the CLI report path, which drops a PNG next to each CSV/JSON it
writes. Headless backend; nothing here is needed by the library itself.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DegenerateMetricError, InputError
from .stats import pearson

_FIGSIZE = (6.0, 4.2)


def _rho_label(records) -> str:
    pairs = [(r.accuracy, r.log_vc) for r in records if r.log_vc is not None]
    try:
        rho = pearson([a for a, _ in pairs], [v for _, v in pairs]).rho
        return f"rho = {rho:.3f}"
    except (DegenerateMetricError, InputError):
        return "rho = n/a"


def plot_sweep(records, path, title: str = "Accuracy vs log(VC)") -> None:
    """Scatter of accuracy against log VC, colored by perturbation level."""
    pts = [r for r in records if r.log_vc is not None]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    if pts:
        sc = ax.scatter(
            [r.log_vc for r in pts],
            [r.accuracy for r in pts],
            c=[r.level for r in pts],
            cmap="viridis",
            s=28,
        )
        fig.colorbar(sc, ax=ax, label="perturbation level")
    ax.set_xlabel("log(VC)")
    ax.set_ylabel("accuracy")
    ax.set_title(f"{title} ({_rho_label(records)})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_detection(result, path) -> None:
    """p-value per contamination level with the significance line."""
    levels = [lv for lv, _ in result.p_values]
    ps = [max(p, 1e-300) for _, p in result.p_values]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(levels, ps, "o-", label="Welch p-value")
    ax.axhline(result.alpha, color="crimson", ls="--", label=f"alpha = {result.alpha:g}")
    if result.p_star is not None:
        ax.axvline(result.p_star, color="gray", ls=":", label=f"p* = {result.p_star:g}")
    ax.set_yscale("log")
    ax.set_xlabel("contamination level")
    ax.set_ylabel("p-value")
    ax.set_title("Early-warning detection")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(traj, path) -> None:
    """Accuracy vs mean log VC per epoch, colored by training progress."""
    xs, ys, cs = [], [], []
    for rec in traj.records:
        finite = [v for v in rec.val_log_vcs if math.isfinite(v)]
        if finite:
            xs.append(sum(finite) / len(finite))
            ys.append(rec.val_accuracy)
            cs.append(rec.epoch)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    if xs:
        sc = ax.scatter(xs, ys, c=cs, cmap="plasma", s=36)
        fig.colorbar(sc, ax=ax, label="epoch")
    ax.set_xlabel("mean log(VC) over validation subsets")
    ax.set_ylabel("validation accuracy")
    ax.set_title("Training trajectory")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
