"""Render benchmark trend figures next to the delimited table."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import averages  # noqa: E402

FIGSIZE = (6.0, 3.8)
DPI = 110


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def render_bench_figures(rows, out_dir: str) -> list[str]:
    """Write the four trend figures; returns the file paths."""
    avg = averages(rows)
    run_counts = sorted({rc for (_m, rc) in avg})
    sizes = [avg[("dst-size-records", rc)][0] for rc in run_counts]
    gather = [avg[("st-gather-ticks", rc)][0] for rc in run_counts]
    merge = [avg[("dst-merge-ticks", rc)][0] for rc in run_counts]
    match1 = [avg[("match-ticks", rc)][0] for rc in run_counts]
    match2 = [avg[("match-ticks-second", rc)][0] for rc in run_counts]
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(run_counts, gather, "o-", label="record gathering")
    ax.plot(run_counts, merge, "s-", label="store merge")
    ax.set_xscale("log")
    ax.set_xlabel("total runs")
    ax.set_ylabel("work units")
    ax.set_title("Gathering vs merge cost")
    ax.legend()
    paths.append(_save(fig, os.path.join(out_dir, "cost_vs_runs.png")))

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(sizes, gather, "o-", label="record gathering")
    ax.plot(sizes, merge, "s-", label="store merge")
    ax.set_xlabel("store records")
    ax.set_ylabel("work units")
    ax.set_title("Cost against store size")
    ax.legend()
    paths.append(_save(fig, os.path.join(out_dir, "cost_vs_size.png")))

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(run_counts, sizes, "o-", color="tab:green")
    ax.set_xscale("log")
    ax.set_xlabel("total runs")
    ax.set_ylabel("store records")
    ax.set_title("Store size against total runs")
    paths.append(_save(fig, os.path.join(out_dir, "dst_size_vs_runs.png")))

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(sizes, match1, "o-", label="first occurrence")
    ax.plot(sizes, match2, "s-", label="second occurrence")
    ax.set_xlabel("store records")
    ax.set_ylabel("comparisons")
    ax.set_title("Known-fault match cost")
    ax.legend()
    paths.append(_save(fig, os.path.join(out_dir, "match_cost.png")))
    return paths
