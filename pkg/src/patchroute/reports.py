"""CSV tables and SVG charts for coverage comparisons.

All numbers are written with fixed formatting so that identical runs give
byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .coverage import CoverageCurve


def _fmt(x: float) -> str:
    return f"{x:.10f}"


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_curve_csv(path, curve: CoverageCurve) -> Path:
    return _write_rows(Path(path), ["K", "avg_rate"], [(k, _fmt(r)) for k, r in enumerate(curve.avg_rate, start=1)])


def write_marginal_csv(path, curve: CoverageCurve) -> Path:
    return _write_rows(
        Path(path), ["rank", "marginal"], [(k, _fmt(m)) for k, m in enumerate(curve.avg_marginal, start=1)]
    )


def rate_histogram(rates: np.ndarray, n_bins: int = 10) -> list[tuple[float, int, float]]:
    """Per-image coverage histogram on ``[0, 1]`` with its cumulative fraction.

    Rows are ``(bin_lower_edge, count, cum_fraction)``; the last bin is closed
    so a rate of exactly 1 lands in it.
    """
    rates = np.asarray(rates, dtype=float)
    counts, edges = np.histogram(rates, bins=n_bins, range=(0.0, 1.0))
    cum = np.cumsum(counts) / max(len(rates), 1)
    return [(float(e), int(c), float(f)) for e, c, f in zip(edges[:-1], counts, cum)]


def write_cdf_csv(path, rates: np.ndarray, n_bins: int = 10) -> Path:
    rows = [(f"{e:.2f}", c, _fmt(f)) for e, c, f in rate_histogram(rates, n_bins)]
    return _write_rows(Path(path), ["rate_bin", "count", "cum_fraction"], rows)


def write_table(path, header: Sequence[str], rows) -> Path:
    out = [[_fmt(v) if isinstance(v, float) else v for v in row] for row in rows]
    return _write_rows(Path(path), header, out)


def plot_comparison(out_dir, curves: Mapping[str, CoverageCurve], budget: int) -> list[Path]:
    """Coverage-vs-K, marginal-gain, and per-image CDF charts as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "patchroute"
    meta = {"Date": None}
    out_dir = Path(out_dir)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, c in curves.items():
        ax.plot(np.arange(1, c.k_max + 1), c.avg_rate, label=name)
    ax.axvline(budget, color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("patch budget K")
    ax.set_ylabel("average coverage rate")
    ax.legend(frameon=False)
    paths.append(out_dir / "coverage_vs_k.svg")
    fig.savefig(paths[-1], metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(curves), 1)
    for i, (name, c) in enumerate(curves.items()):
        ax.bar(np.arange(1, c.k_max + 1) + i * width, c.avg_marginal, width=width, label=name)
    ax.set_xlabel("rank")
    ax.set_ylabel("mean objects newly covered")
    ax.legend(frameon=False)
    paths.append(out_dir / "marginal_gain.svg")
    fig.savefig(paths[-1], metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, c in curves.items():
        r = np.sort(c.per_image_rates(min(budget, c.k_max)))
        ax.step(r, np.arange(1, len(r) + 1) / len(r), where="post", label=name)
    ax.set_xlabel(f"per-image coverage rate at K={budget}")
    ax.set_ylabel("cumulative fraction of images")
    ax.legend(frameon=False)
    paths.append(out_dir / "coverage_cdf.svg")
    fig.savefig(paths[-1], metadata=meta)
    plt.close(fig)
    return paths
