import io
import threading

import matplotlib
matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

import numpy as np  # noqa: E402

from .exceptions import DomainError, InputError  # noqa: E402
from .sim_core import SimConfig, VectorField  # noqa: E402

# 640 x 480 pixels
FIGSIZE = (6.4, 4.8)
DPI     = 100

# matplotlib is not thread safe, epochs may render concurrently
_lock = threading.Lock()


def _to_png(fig: Figure) -> bytes:
    buf = io.BytesIO()
    with _lock:
        fig.savefig(buf, format="png", dpi=DPI)
    return buf.getvalue()


def render_distance_plot(series) -> bytes:
    """
    Plot a D_avg series against the time step.

    Args:
        series: The average pairwise distance per step.

    Returns:
        bytes: A 640x480 PNG image.
    """

    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise InputError(f"distance plot needs at least 2 values, got {y.size}")

    fig = Figure(figsize=FIGSIZE)
    ax  = fig.add_subplot()
    ax.plot(np.arange(y.size), y, color="tab:blue")
    ax.set_xlabel("time step")
    ax.set_ylabel("average pairwise distance")
    ax.grid(True, alpha=0.3)
    return _to_png(fig)


def render_layout_plot(positions, field: VectorField, sim: SimConfig) -> bytes:
    """
    Scatter the final cell positions over the vector field.

    Args:
        positions: (N, 2) final positions.
        field (VectorField): The intervention, drawn as arrows at node centers.
        sim (SimConfig): Arena bounds.

    Returns:
        bytes: A 640x480 PNG image.
    """

    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise DomainError(f"positions must be an (N, 2) array, got {pos.shape}")

    centers = field.node_centers(sim)

    fig = Figure(figsize=FIGSIZE)
    ax  = fig.add_subplot()
    # quiver cannot autoscale an all-zero field
    if field.vectors.any():
        ax.quiver(centers[..., 0], centers[..., 1], field.vectors[..., 0], field.vectors[..., 1],
                  color="0.6", angles="xy")
    ax.scatter(pos[:, 0], pos[:, 1], s=12, color="tab:red")
    ax.set_xlim(0.0, sim.width)
    ax.set_ylim(0.0, sim.height)
    ax.set_aspect("equal")
    return _to_png(fig)


def render_fitness_curves(rows) -> bytes:
    """
    Plot the across-run mean of the best fitness per generation, with the
    distance and position reward curves when the summary carries them.
    Standard deviations are drawn as bands.

    Args:
        rows: SummaryRows from stats.summarize_runs.

    Returns:
        bytes: A 640x480 PNG image.
    """

    if len(rows) == 0:
        raise InputError("no summary rows to plot")

    x = np.array([r.generation for r in rows], dtype=float)
    curves = [("best fitness", "mean", "std", "tab:blue"),
              ("distance reward", "r_distance_mean", "r_distance_std", "tab:orange"),
              ("position reward", "r_position_mean", "r_position_std", "tab:green")]

    fig = Figure(figsize=FIGSIZE)
    ax  = fig.add_subplot()
    for label, mean_attr, std_attr, color in curves:
        if getattr(rows[0], mean_attr) is None:
            continue
        mean = np.array([getattr(r, mean_attr) for r in rows], dtype=float)
        std  = np.array([getattr(r, std_attr) for r in rows], dtype=float)
        ax.plot(x, mean, color=color, label=label)
        ax.fill_between(x, mean - std, mean + std, color=color, alpha=0.2, linewidth=0)
    ax.set_xlabel("generation")
    ax.set_ylabel("reward")
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    return _to_png(fig)
