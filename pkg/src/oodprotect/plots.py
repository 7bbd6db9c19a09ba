"""Figure rendering for reports and demo experiments.

Every function writes one PNG next to the delimited output it illustrates
and returns the path. Rendering is headless (Agg) and deterministic for
fixed inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .adversarial import SweepReport
from .metrics import MetricReport, RankedCandidate
from .toynet import Mlp, ToyDataset, forward

_DPI = 150


def plot_metric_reports(reports: list[MetricReport], path, title: str = "OOD candidates") -> Path:
    """Bubble chart: CR% against SE, bubble area scaled by CD."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    cds = np.array([r.cd for r in reports], dtype=float)
    scale = cds.max() if cds.max() > 0 else 1.0
    sizes = 80.0 + 900.0 * cds / scale
    for report, size in zip(reports, sizes):
        ax.scatter(100.0 * report.cr, report.se, s=size, alpha=0.55,
                   label=f"{report.ood_name} (CD={report.cd:.2f})")
        ax.annotate(report.ood_name, (100.0 * report.cr, report.se),
                    textcoords="offset points", xytext=(6, 6), fontsize=8)
    ax.axhline(reports[0].se_max, color="gray", linestyle=":", linewidth=1,
               label="SE cap (ln K)")
    ax.set_xlabel("coverage ratio (%)")
    ax.set_ylabel("softmax entropy (nats)")
    ax.set_title(title)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_ranking(ranked: list[RankedCandidate], path) -> Path:
    """Horizontal bars of the combined SE/CR score, best candidate on top."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 0.7 * len(ranked) + 1.6))
    names = [rc.report.ood_name for rc in ranked]
    scores = [rc.score for rc in ranked]
    y = np.arange(len(ranked))[::-1]
    ax.barh(y, scores, height=0.6, color="tab:blue", alpha=0.8)
    for yi, rc in zip(y, ranked):
        ax.text(rc.score + 0.01, yi, rc.rule, va="center", fontsize=8, color="dimgray")
    ax.set_yticks(y, names)
    ax.set_xlabel("(SE / ln K + CR) / 2")
    ax.set_xlim(0, 1.05)
    ax.set_title("protectiveness ranking")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def _grid(points: np.ndarray, pad: float = 2.0, steps: int = 220):
    lo = points.min(axis=0) - pad
    hi = points.max(axis=0) + pad
    xs = np.linspace(lo[0], hi[0], steps)
    ys = np.linspace(lo[1], hi[1], steps)
    gx, gy = np.meshgrid(xs, ys)
    return gx, gy, np.column_stack([gx.ravel(), gy.ravel()])


def plot_decision_map(
    net: Mlp,
    data: ToyDataset,
    path,
    title: str,
    rejection_class: int | None = None,
    ood_points: np.ndarray | None = None,
    probes: np.ndarray | None = None,
) -> Path:
    """Predicted-class map over the plane with the training data on top.

    With a rejection class, its region is drawn in gray; otherwise the map
    is shaded by the maximum softmax confidence.
    """
    if data.dim != 2:
        raise ValueError("decision maps require 2-d data")
    path = Path(path)
    extra = [ood_points, probes]
    stacked = [data.points] + [np.asarray(e) for e in extra if e is not None]
    gx, gy, flat = _grid(np.concatenate(stacked))
    probs, _ = forward(net, flat)
    fig, ax = plt.subplots(figsize=(6.0, 5.2))
    if rejection_class is None:
        conf = probs.max(axis=1).reshape(gx.shape)
        im = ax.contourf(gx, gy, conf, levels=12, cmap="viridis", alpha=0.75)
        fig.colorbar(im, ax=ax, label="max softmax")
    else:
        preds = probs.argmax(axis=1).reshape(gx.shape)
        shade = np.where(preds == rejection_class, -1, preds)
        ax.contourf(gx, gy, shade, levels=np.arange(-1.5, net.out_dim), cmap="tab10", alpha=0.45)
        rej_mask = (preds == rejection_class).astype(float)
        ax.contourf(gx, gy, rej_mask, levels=[0.5, 1.5], colors=["lightgray"], alpha=0.85)
    for c in range(data.num_classes):
        mask = data.labels == c
        ax.scatter(data.points[mask, 0], data.points[mask, 1], s=8, label=f"class {c}")
    if ood_points is not None:
        ax.scatter(ood_points[:, 0], ood_points[:, 1], s=8, c="k", marker=".",
                   alpha=0.4, label="OOD train")
    if probes is not None:
        ax.scatter(probes[:, 0], probes[:, 1], s=42, c="k", marker="x", label="probes")
    ax.set_title(title)
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_sweep(report: SweepReport, path) -> Path:
    """Rates and coverage distance against the FGS noise magnitude."""
    path = Path(path)
    alphas = [r.alpha for r in report.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    ax1.plot(alphas, [r.vanilla_err for r in report.rows], "o-", label="vanilla err")
    ax1.plot(alphas, [r.aug_err for r in report.rows], "s-", label="augmented err")
    ax1.plot(alphas, [r.aug_rej for r in report.rows], "^-", label="augmented rej")
    ax1.set_xlabel("noise magnitude")
    ax1.set_ylabel("rate")
    ax1.set_ylim(-0.02, 1.02)
    ax1.legend(fontsize=8)
    ax1.set_title("victim rates")
    ax2.plot(alphas, [r.cd for r in report.rows], "o-", color="tab:red", label="adversary CD")
    if report.train_ood_cd is not None:
        ax2.axhline(report.train_ood_cd, color="tab:red", linestyle=":",
                    label="training OOD CD")
    ax2.set_xlabel("noise magnitude")
    ax2.set_ylabel("coverage distance")
    ax2.legend(fontsize=8)
    ax2.set_title("distance to class regions")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
