"""Plot script emission and PNG rendering of run artifacts.

``plots.txt`` lists one plot per line as ``name | csv | x | y | xscale | yscale``
so any external tool can redraw the figures from the CSV files.  The same
specs are rendered to ``figures/<name>.png`` with matplotlib's Agg backend.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_csv  # noqa: E402

PLOTS = [
    ("tension", "trajectory.csv", "t", "tension_l2", "linear", "log"),
    ("energy", "trajectory.csv", "t", "energy", "linear", "linear"),
    ("energy_gap", "energy_gap.csv", "t", "energy_gap", "linear", "log"),
    ("lambda1", "trajectory.csv", "t", "lambda1", "linear", "linear"),
    ("identity", "identity.csv", "t", "residual", "linear", "log"),
]


def write_plot_script(root, meta):
    root = Path(root)
    lines = [f"# heatflow plot script config_hash={meta['config_hash']} seed={meta['seed']}",
             "# name | csv | x | y | xscale | yscale"]
    for spec in PLOTS:
        if (root / spec[1]).exists():
            lines.append(" | ".join(spec))
    path = root / "plots.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _column(path, name):
    _, header, rows = read_csv(path)
    if name not in header:
        return None
    i = header.index(name)
    return np.array([float(r[i]) if r[i] not in ("", "nan") else np.nan for r in rows])


def render_figures(root, title=""):
    """Draw every plot of ``plots.txt`` that has data; returns the written paths."""
    root = Path(root)
    out_dir = root / "figures"
    out_dir.mkdir(exist_ok=True)
    written = []
    for name, csv_name, x, y, xscale, yscale in PLOTS:
        path = root / csv_name
        if not path.exists():
            continue
        xs, ys = _column(path, x), _column(path, y)
        if xs is None or ys is None:
            continue
        keep = np.isfinite(ys) & (ys > 0 if yscale == "log" else True)
        if keep.sum() < 2:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs[keep], ys[keep], lw=1.2)
        ax.set_xscale(xscale)
        ax.set_yscale(yscale)
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        ax.set_title(f"{title} {name}".strip())
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        target = out_dir / f"{name}.png"
        fig.savefig(target, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(target)
    return written
