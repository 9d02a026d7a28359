"""Figure rendering for pipeline reports and sweeps.

All functions write PNG files next to the delimited outputs; nothing is
shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_sweep_figure(rows, param_label: str, path: Path | str) -> None:
    """Line plot of precision/recall/F1 against the swept parameter.

    ``rows`` is the list of (value, EvalReport) a sweep returns.
    """
    values = [v for v, _ in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pick, style in (
        ("precision", lambda r: r.precision, "s--"),
        ("recall", lambda r: r.recall, "^--"),
        ("F1", lambda r: r.f1, "o-"),
    ):
        ax.plot(values, [pick(r) for _, r in rows], style, label=name, markersize=4)
    ax.set_xlabel(param_label)
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cluster_size_figure(clusters, path: Path | str) -> None:
    """Histogram of final cluster sizes."""
    sizes = [len(c) for c in clusters]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if sizes:
        bins = range(2, max(sizes) + 2)
        ax.hist(sizes, bins=bins, align="left", rwidth=0.85, color="#4878a8")
        ax.set_xticks(list(bins)[:-1])
    ax.set_xlabel("cluster size")
    ax.set_ylabel("clusters")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_label_figure(label_counts: dict[str, int], path: Path | str) -> None:
    """Bar chart of pruning labels (core / reachable / noise)."""
    names = list(label_counts)
    counts = [label_counts[n] for n in names]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    bars = ax.bar(names, counts, color=["#3a7d44", "#c9a227", "#9b2226"])
    for bar, count in zip(bars, counts):
        ax.annotate(
            str(count),
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center",
            va="bottom",
            fontsize=9,
        )
    ax.set_ylabel("records")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
