"""Deterministic SVG figures (line overlays and triangular heatmaps).

Figures are drawn on a bare :class:`matplotlib.figure.Figure`, so no GUI
backend is touched. A fixed hash salt and an empty date make repeated runs
byte-identical.
"""

from dataclasses import dataclass

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .errors import UsageError

_RC = {"svg.hashsalt": "fracinv", "svg.fonttype": "none", "path.simplify": False}


@dataclass
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    style: str = "-"


@dataclass
class PlotSpec:
    """Line overlay: ``series`` share one pair of axes."""

    series: list
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    xscale: str = "linear"
    yscale: str = "linear"
    legend: bool = True


@dataclass
class HeatmapSpec:
    """Values on a square grid; entries above the diagonal (or NaN) are masked."""

    x: np.ndarray
    values: np.ndarray
    xlabel: str = "x"
    ylabel: str = "y"
    title: str = ""
    colorbar: str = ""


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})


def _check_series(spec):
    if not spec.series:
        raise UsageError("nothing to plot: no series")
    for s in spec.series:
        x, y = np.asarray(s.x, dtype=float), np.asarray(s.y, dtype=float)
        if x.size == 0 or x.shape != y.shape:
            raise UsageError(f"series {s.name!r} is empty or has mismatched x/y")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise UsageError(f"series {s.name!r} has non-finite values")


def plot_series(spec, path):
    """Line overlay with legend entries named after the series."""
    _check_series(spec)
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(6.0, 4.0))
        ax = fig.add_subplot()
        for s in spec.series:
            ax.plot(s.x, s.y, s.style, label=s.name, gid=f"series-{s.name}")
        ax.set_xscale(spec.xscale)
        ax.set_yscale(spec.yscale)
        ax.set_xlabel(spec.xlabel)
        ax.set_ylabel(spec.ylabel)
        if spec.title:
            ax.set_title(spec.title)
        if spec.legend:
            ax.legend()
        fig.tight_layout()
        _save(fig, path)
    return path


def plot_triangle(spec, path):
    """Heatmap of ``values[i, k]`` at ``(x_i, x_k)`` with the region ``k > i`` masked."""
    v = np.array(spec.values, dtype=float)
    x = np.asarray(spec.x, dtype=float)
    if v.size == 0 or v.shape != (x.size, x.size):
        raise UsageError("heatmap needs a square array matching x")
    v[np.triu_indices(x.size, 1)] = np.nan
    if not np.any(np.isfinite(v)):
        raise UsageError("heatmap has no finite values")
    masked = np.ma.masked_invalid(v)
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.0, 4.0))
        ax = fig.add_subplot()
        mesh = ax.pcolormesh(x, x, masked.T, shading="nearest", cmap="viridis")
        ax.set_xlabel(spec.xlabel)
        ax.set_ylabel(spec.ylabel)
        ax.set_aspect("equal")
        if spec.title:
            ax.set_title(spec.title)
        fig.colorbar(mesh, ax=ax, label=spec.colorbar)
        fig.tight_layout()
        _save(fig, path)
    return path


def emit_svg(spec, path):
    """Dispatch on the plot description type."""
    if isinstance(spec, PlotSpec):
        return plot_series(spec, path)
    if isinstance(spec, HeatmapSpec):
        return plot_triangle(spec, path)
    raise UsageError(f"unknown plot spec {type(spec).__name__}")
