"""Return-vs-env-steps figures with seed bands, written alongside the plotted data as CSV."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from skillprior.harness import align_curves, read_curve  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

MERGED_COLUMNS = ("label", "env_step", "mean", "std", "min", "max", "n_seeds")


def summarize(paths: Sequence) -> Dict[str, np.ndarray]:
    """Seed statistics of normalized return on the grid shared by all ``paths``."""
    grid, values = align_curves([read_curve(p) for p in paths])
    return {"env_step": grid, "mean": values.mean(0), "std": values.std(0), "min": values.min(0),
            "max": values.max(0), "n_seeds": np.full(len(grid), len(paths))}


def plot_curves(groups: Mapping[str, Sequence], image_path, csv_path=None, title: str = "") -> Path:
    """Plot one mean curve per label, shading mean +- std across that label's seed logs.

    Returns the CSV path; defaults to ``image_path`` with a ``.csv`` suffix.
    """
    image_path = Path(image_path)
    csv_path = Path(csv_path) if csv_path else image_path.with_suffix(".csv")
    stats = {label: summarize(paths) for label, paths in groups.items()}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, s in stats.items():
            line, = ax.plot(s["env_step"], s["mean"], label=f"{label} (n={int(s['n_seeds'][0])})")
            if s["n_seeds"][0] > 1:
                ax.fill_between(s["env_step"], np.clip(s["mean"] - s["std"], 0, 1),
                                np.clip(s["mean"] + s["std"], 0, 1), color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("normalized return")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(image_path, dpi=150)
        plt.close(fig)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MERGED_COLUMNS)
        for label, s in stats.items():
            for i in range(len(s["env_step"])):
                w.writerow([label, int(s["env_step"][i])] + [repr(float(s[c][i])) for c in MERGED_COLUMNS[2:6]]
                           + [int(s["n_seeds"][i])])
    return csv_path
