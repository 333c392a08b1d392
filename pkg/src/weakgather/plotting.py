"""Summary figures for batch reports.

Figures are built on bare :class:`matplotlib.figure.Figure` objects so no
display backend is ever touched; everything goes straight to files.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Sequence

from matplotlib.figure import Figure

OUTCOME_ORDER = ("gathered_node", "gathered_edge", "terminated_apart", "horizon_exhausted")


def rounds_figure(rows: Sequence[dict]) -> Figure:
    """Histogram of final rounds, one series per scheduler."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    by_sched: dict[str, list[int]] = {}
    for row in rows:
        by_sched.setdefault(row["scheduler"], []).append(row["final_round"])
    for sched in sorted(by_sched):
        ax.hist(by_sched[sched], bins=20, alpha=0.6, label=sched)
    ax.set_xlabel("final round")
    ax.set_ylabel("runs")
    if by_sched:
        ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def outcomes_figure(rows: Sequence[dict]) -> Figure:
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    counts = Counter(row["outcome"] for row in rows)
    labels = [o for o in OUTCOME_ORDER if counts[o]] + sorted(set(counts) - set(OUTCOME_ORDER))
    ax.bar(range(len(labels)), [counts[o] for o in labels], color="0.4")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("runs")
    fig.tight_layout()
    return fig


def arrivals_figure(rows: Sequence[dict]) -> Figure:
    """Measured pebble cycle-arrival round against the per-pebble bound."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(111)
    xs, ys = [], []
    for row in rows:
        for measured, bound in zip(row.get("arrivals", ()), row.get("arrival_bounds", ())):
            if measured is not None:
                xs.append(bound)
                ys.append(measured)
    ax.scatter(xs, ys, s=8, color="k")
    if xs:
        lo, hi = min(xs), max(xs)
        ax.plot([lo, hi], [lo, hi], color="r", lw=1, label="bound")
        ax.set_xscale("log")
        ax.set_yscale("symlog", linthresh=1)
        ax.set_ylim(bottom=0)
        ax.legend(frameon=False, loc="upper left")
    ax.set_xlabel("bound (rounds)")
    ax.set_ylabel("measured arrival round")
    fig.tight_layout()
    return fig


def save_report_figures(rows: Sequence[dict], outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, build in (("rounds.png", rounds_figure), ("outcomes.png", outcomes_figure), ("arrivals.png", arrivals_figure)):
        path = outdir / name
        build(rows).savefig(path, dpi=100)
        written.append(path)
    return written
