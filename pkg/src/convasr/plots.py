"""Figure rendering for run reports.

Every CLI report path drops PNG figures next to its CSV output: loss curves
against wall time, per-layer weight histograms on a log10 fraction scale,
weight-difference histograms, input-layer filter grids, and evaluation score
bars. The CSVs stay the canonical artifacts; figures are a convenience view.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _smooth(values, window: int):
    if window <= 1 or len(values) < 2:
        return np.asarray(values, dtype=float)
    kernel = np.ones(min(window, len(values))) / min(window, len(values))
    return np.convolve(values, kernel, mode="valid")


def render_loss_curves(runs: dict, out_path, smooth: int = 25):
    """runs: label -> list of (step, wall_seconds, batch_loss, k) rows."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rows in runs.items():
        wall = np.array([r[1] for r in rows])
        loss = np.array([r[2] for r in rows])
        sm = _smooth(loss, smooth)
        ax.plot(wall[len(wall) - len(sm):], sm, label=label, linewidth=1.2)
    ax.set_xlabel("wall time [s]")
    ax.set_ylabel(f"training loss (smoothed over {smooth} steps)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_step_times(step_times: dict, out_path):
    """step_times: k -> list of per-step seconds."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = sorted(step_times)
    medians = [float(np.median(step_times[k])) for k in ks]
    ax.plot(ks, medians, marker="o")
    ax.set_xlabel("frozen layers k")
    ax.set_ylabel("median seconds per step")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_weight_histograms(layer_hists, out_path, title="weight distribution"):
    """layer_hists: list of (layer_index, edges, fractions)."""
    fig, ax = plt.subplots(figsize=(8, 5))
    cmap = plt.get_cmap("viridis")
    n = max(len(layer_hists), 2)
    for pos, (layer, edges, fractions) in enumerate(layer_hists):
        centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
        ax.plot(
            centers, np.maximum(fractions, 1e-12),
            color=cmap(pos / (n - 1)), label=f"layer {layer + 1}", linewidth=1.0,
        )
    ax.set_yscale("log")
    ax.set_xlabel("weight value")
    ax.set_ylabel("fraction of weights (log10 scale)")
    ax.set_title(title)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_diff_histograms(diffs, out_path):
    """diffs: list of introspect.LayerDiff."""
    fig, ax = plt.subplots(figsize=(8, 5))
    cmap = plt.get_cmap("viridis")
    plotted = [d for d in diffs if not d.skipped]
    n = max(len(plotted), 2)
    for pos, d in enumerate(plotted):
        centers = 0.5 * (d.edges[:-1] + d.edges[1:])
        ax.plot(
            centers, np.maximum(d.fractions, 1e-12),
            color=cmap(pos / (n - 1)), label=f"layer {d.layer + 1}", linewidth=1.0,
        )
    ax.set_yscale("log")
    ax.set_xlabel("|weight difference|")
    ax.set_ylabel("fraction of weights (log10 scale)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_filter_grid(grids, out_path, max_filters: int = 16, title="filters"):
    """grids: [out_channels, kernel_width, in_channels] from export_filters."""
    n = min(grids.shape[0], max_filters)
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.0 * rows))
    axes = np.atleast_1d(axes).ravel()
    vmax = np.abs(grids[:n]).max() or 1.0
    for i in range(n):
        axes[i].imshow(
            grids[i].T, aspect="auto", cmap="RdBu_r", vmin=-vmax, vmax=vmax,
            origin="lower",
        )
        axes[i].set_title(f"out {i}", fontsize=7)
        axes[i].set_xticks([])
        axes[i].set_yticks([])
    for ax in axes[n:]:
        ax.axis("off")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_eval_scores(summary, out_path):
    """Bar chart of corpus LER/WER for greedy vs beam decoding."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    labels = ["LER greedy", "LER beam", "WER greedy", "WER beam"]
    values = [
        summary["greedy"].mean_ler, summary["beam"].mean_ler,
        summary["greedy"].mean_wer, summary["beam"].mean_wer,
    ]
    bars = ax.bar(labels, values, color=["#888", "#2a6", "#888", "#2a6"])
    for bar, v in zip(bars, values):
        ax.text(
            bar.get_x() + bar.get_width() / 2, v, f"{100 * v:.1f}%",
            ha="center", va="bottom", fontsize=8,
        )
    ax.set_ylabel("error rate (mean over utterances)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
