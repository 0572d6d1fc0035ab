"""Matplotlib figure rendering for the CLI report path.

Only non-map figures are rendered (choropleths stay out of scope): the
skill-split scatter and the change-by-region bars, both derived from the same
frames that are emitted as CSV.
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ._io import atomic_write_bytes  # noqa: E402


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def render_skill_scatter(plotdata: pd.DataFrame, path) -> None:
    """Log openness to tertiary (x) vs non-tertiary (y) migrants.

    Circle area tracks destination population; the orange line is the
    45-degree line and the green one the linear fit.
    """
    df = plotdata.dropna(subset=["log_open_tertiary", "log_open_nontertiary"])
    fig, ax = plt.subplots(figsize=(7.0, 6.0))
    x = df["log_open_tertiary"].to_numpy()
    y = df["log_open_nontertiary"].to_numpy()
    pop = df["pop"].to_numpy(dtype=float)
    if np.isfinite(pop).any() and np.nanmax(pop) > 0:
        sizes = 10.0 + 240.0 * np.nan_to_num(pop) / np.nanmax(pop)
    else:
        sizes = np.full(len(df), 30.0)
    ax.scatter(x, y, s=sizes, alpha=0.55, edgecolor="black", linewidth=0.3,
               color="tab:blue")
    if len(df):
        lo = min(x.min(), y.min()) - 0.3
        hi = max(x.max(), y.max()) + 0.3
        ax.plot([lo, hi], [lo, hi], color="tab:orange", lw=1.5, label="45-degree line")
        if len(df) >= 2 and np.std(x) > 0:
            b, a = np.polyfit(x, y, 1)
            xs = np.array([lo, hi])
            ax.plot(xs, a + b * xs, color="tab:green", lw=1.5, label="linear fit")
        ax.set_xlim(lo, hi)
        ax.set_ylim(lo, hi)
    ax.set_xlabel("log openness, tertiary educated (0 -> 0.5)")
    ax.set_ylabel("log openness, non-tertiary educated (0 -> 0.5)")
    ax.set_title("Openness to more vs less educated immigrants")
    ax.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    _save(fig, path)


def render_region_change(region_means: pd.DataFrame, path) -> None:
    """Mean diversity change by region, grouped by decade."""
    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    pivot = region_means.pivot_table(index="region", columns="period",
                                     values="mean_delta", sort=True)
    idx = np.arange(len(pivot))
    periods = list(pivot.columns)
    width = 0.8 / max(len(periods), 1)
    for k, period in enumerate(periods):
        ax.bar(idx + k * width, pivot[period].to_numpy(), width=width, label=str(period))
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(idx + width * (len(periods) - 1) / 2)
    ax.set_xticklabels(pivot.index, rotation=45, ha="right")
    ax.set_ylabel("mean change in diversity-based openness")
    ax.set_title("Change in openness by region and decade")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
