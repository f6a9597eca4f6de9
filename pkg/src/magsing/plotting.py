"""Static figures for run directories (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_solution(u, path, singular_mask=None, trajectories=(), title=None):
    """Solution field with the detected singular nodes and flow curves on top."""
    grid = u.grid
    vals = np.asarray(u.u, float)
    if grid.dim == 1:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        x = grid.axes()[0]
        ax.plot(x, vals, "k-", lw=1.2, label="u")
        if singular_mask is not None and singular_mask.any():
            ax.plot(x[singular_mask], vals[singular_mask], "r.", ms=4, label="singular")
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        ax.legend(loc="best", frameon=False)
    else:
        fig, ax = plt.subplots(figsize=(5.5, 5))
        im = ax.imshow(vals.T, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.8, label="u")
        if singular_mask is not None and singular_mask.any():
            pts = np.argwhere(singular_mask) * grid.h
            ax.plot(pts[:, 0], pts[:, 1], ",", color="w", alpha=0.8)
        for tr in trajectories:
            p = np.mod(tr.points, 1.0)
            ax.plot(p[:, 0], p[:, 1], ".", ms=1.5, color="tab:red")
            ax.plot(p[0, 0], p[0, 1], "o", ms=4, mfc="none", mec="tab:red")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_indicator(trajectories, delta, path):
    """Singularity indicator along each flow curve against the threshold."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, tr in enumerate(trajectories):
        ax.plot(tr.times, tr.indicator, lw=1.0, label=f"start {k}")
    ax.axhline(delta, color="k", ls="--", lw=0.8, label="delta")
    ax.axhline(0.5 * delta, color="k", ls=":", lw=0.8, label="delta/2")
    ax.set_xlabel("t")
    ax.set_ylabel("indicator")
    if len(trajectories) <= 8:
        ax.legend(loc="best", frameon=False, fontsize=7)
    return _save(fig, path)


def plot_psi(traces, path):
    """``psi_m(t)`` for each rung of the mollifier ladder with its fitted bound."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    colors = plt.cm.plasma(np.linspace(0.1, 0.85, max(len(traces), 1)))
    for tr, col in zip(traces, colors):
        ax.plot(tr.times, tr.psi, color=col, lw=1.2, label=f"m={tr.m}")
        if tr.fit_ok:
            ax.plot(tr.times, tr.bound(), color=col, lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("psi")
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)


def plot_ladder(xs, ys, path, xlabel, ylabel, bound=None):
    """Error-versus-refinement plot on log axes."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(xs, ys, "o-", label="measured")
    if bound is not None:
        ax.loglog(xs, bound, "k--", lw=0.8, label="bound")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)
