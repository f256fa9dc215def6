"""Figures written next to the CSV outputs (reconstructed maps, loss curves, scaling)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import PROPERTY_NAMES  # noqa: E402

LABELS = {
    "sos": "speed of sound [m/s]",
    "density": "density [kg/m$^3$]",
    "attenuation": "attenuation [1/s]",
    "nonlinearity": "nonlinearity",
}


def plot_maps(path, columns, bounds, dx=None, title=None):
    """Grid of maps: one row per property, one column per entry of ``columns``.

    ``columns`` maps a column title (e.g. "truth", "initial", "estimate") to a
    PropertySet. Every row shares the colour range given by ``bounds``.
    """
    names = list(columns)
    fig, axes = plt.subplots(len(PROPERTY_NAMES), len(names), squeeze=False,
                             figsize=(2.6 * len(names) + 0.8, 2.4 * len(PROPERTY_NAMES)))
    for i, prop in enumerate(PROPERTY_NAMES):
        lo, hi = bounds.of(prop)
        for j, col in enumerate(names):
            ax = axes[i, j]
            m = getattr(columns[col], prop)
            extent = None
            if dx is not None:
                # depth (x, axis 0) runs down the page, lateral z across
                extent = (0, m.shape[1] * dx * 1e3, m.shape[0] * dx * 1e3, 0)
            im = ax.imshow(m, vmin=lo, vmax=hi, cmap="viridis", extent=extent, interpolation="nearest")
            if i == 0:
                ax.set_title(col)
            if j == 0:
                ax.set_ylabel("depth [mm]" if dx else "x [cells]")
            if i == len(PROPERTY_NAMES) - 1:
                ax.set_xlabel("lateral [mm]" if dx else "z [cells]")
            ax.tick_params(labelsize=7)
        fig.colorbar(im, ax=axes[i, :].tolist(), shrink=0.85, label=LABELS[prop])
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_losses(path, series, ylabel="data loss"):
    """``series`` maps a label to a sequence of loss values."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, values in series.items():
        ax.semilogy(np.arange(len(values)), values, marker=".", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3, which="both")
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_scaling(path, reports):
    """Log-log wall time against problem size with the fitted slopes in the legend."""
    axes_by = sorted({r.axis for r in reports})
    fig, axes = plt.subplots(1, len(axes_by), squeeze=False, figsize=(4.2 * len(axes_by), 3.4))
    for ax, axis in zip(axes[0], axes_by):
        for rep in (r for r in reports if r.axis == axis):
            x, y = np.asarray(rep.sizes, float), np.asarray(rep.times, float)
            line, = ax.loglog(x, y, "o", label=f"{rep.engine} (slope {rep.slope:.2f})")
            k, c = np.polyfit(np.log(x), np.log(y), 1)
            ax.loglog(x, np.exp(c) * x**k, "-", color=line.get_color(), alpha=0.6)
        ax.set_xlabel("grid cells" if axis == "cells" else "time steps")
        ax.set_ylabel("wall time [s]")
        ax.grid(alpha=0.3, which="both")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
