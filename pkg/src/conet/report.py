"""Report rendering: delimited tables plus matplotlib figures.

Every evaluation path writes its numbers as TSV next to a PNG rendering of
the same data, so results stay greppable and visual.  The Agg backend is
forced so rendering works headless.
"""

from __future__ import annotations

import csv
from typing import Iterable, Mapping, Sequence


def write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_learning_curves(curves: Mapping[str, Sequence[tuple[int, float]]],
                           out_path, *, xlabel: str = "labeled samples",
                           ylabel: str = "metric", title: str = "") -> None:
    """One line per strategy: x = labeled count, y = round metric."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(curves):
        points = curves[name]
        ax.plot([x for x, _ in points], [y for _, y in points],
                marker="o", markersize=3, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def render_sweep(xs: Sequence[float], ys: Sequence[float], out_path, *,
                 xlabel: str, ylabel: str, title: str = "",
                 logx: bool = False) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def render_bars(labels: Sequence[str], values: Sequence[float], out_path, *,
                ylabel: str, title: str = "") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
