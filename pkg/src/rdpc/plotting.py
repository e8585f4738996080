"""Fig. 1-style input/output panels for closed-loop records."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .controller import ClosedLoopRecord


def plot_series(rec: ClosedLoopRecord) -> list[tuple[str, int, float]]:
    """Long-form ``(series, k, value)`` rows: every input and output channel over k."""
    rows = []
    for s in rec.steps:
        rows += [(f"u{i + 1}", s.k, float(v)) for i, v in enumerate(s.u)]
    for s in rec.steps:
        rows += [(f"y{i + 1}", s.k, float(v)) for i, v in enumerate(s.y)]
    return rows


def write_plot_data(rec: ClosedLoopRecord, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "k", "value"])
        for name, k, v in plot_series(rec):
            w.writerow([name, k, repr(v)])
    return path


def render_figure(rec: ClosedLoopRecord, path, title: str | None = None) -> Path:
    """Two stacked panels (inputs, outputs) with norm bounds if configured."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    ks = np.array([s.k for s in rec.steps])
    us = np.array([s.u for s in rec.steps])
    ys = np.array([s.y for s in rec.steps])
    fig, (ax_u, ax_y) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.2))
    for i in range(us.shape[1]):
        ax_u.step(ks, us[:, i], where="post", label=f"$u_{i + 1}$")
    for i in range(ys.shape[1]):
        ax_y.plot(ks, ys[:, i], marker=".", label=f"$y_{i + 1}$")
    c = rec.config.constraints
    if c is not None:
        ax_u.plot(ks, np.linalg.norm(us, axis=1), "k:", lw=0.8, label=r"$\|u\|$")
        ax_y.plot(ks, np.linalg.norm(ys, axis=1), "k:", lw=0.8, label=r"$\|y\|$")
        ax_u.axhline(c.u_max, color="r", ls="--", lw=0.8)
        ax_y.axhline(c.y_max, color="r", ls="--", lw=0.8)
    boot = [s.k for s in rec.steps if s.status == "bootstrap"]
    if boot:
        for ax in (ax_u, ax_y):
            ax.axvspan(min(boot), max(boot) + 1, color="0.9", lw=0)
    ax_u.set_ylabel("input")
    ax_y.set_ylabel("output")
    ax_y.set_xlabel("k")
    for ax in (ax_u, ax_y):
        ax.grid(alpha=0.3)
        ax.legend(loc="upper right", fontsize="small")
    if title:
        ax_u.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
