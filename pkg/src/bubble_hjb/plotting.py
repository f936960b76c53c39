"""Line charts for the CLI reports, written as SVG.

Charts are rendered with the non-interactive Agg backend and a fixed SVG
hash salt and no date stamp, so rerunning a command reproduces the files
byte for byte.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import ScalarField  # noqa: E402

_STYLE = {
    "svg.hashsalt": "bubble-hjb",
    "svg.fonttype": "none",
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_fields(fields: Mapping[str, ScalarField], path, title: str = "",
                ylabel: str = "u(x)") -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, u in fields.items():
            ax.plot(u.x, u.values, label=label, lw=1.4)
        ax.set_xlabel("x")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(fields) > 1:
            ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_branch(rows: Sequence[tuple], lambda_c: float, path) -> Path:
    """sup-norm against lambda, one curve per eps, with lambda_c marked."""
    by_eps = {}
    for eps, lam, norm in rows:
        by_eps.setdefault(eps, []).append((lam, norm))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for eps, pts in by_eps.items():
            lam, norm = np.array(pts).T
            ax.plot(lam, norm, marker=".", ms=3, lw=1.2, label=f"eps = {eps:g}")
        ax.axvline(lambda_c, color="0.4", ls="--", lw=1.0, label=f"lambda_c = {lambda_c:.6g}")
        ax.set_xlabel("lambda")
        ax.set_ylabel("sup |u|")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_series(times: Sequence[float], gaps: Sequence[float], norms: Sequence[float],
                path) -> Path:
    """Distance to the stationary solution and sup-norm over time."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        t = np.asarray(times)
        g = np.asarray(gaps, dtype=float)
        if np.any(g > 0):
            ax.semilogy(t[g > 0], g[g > 0], lw=1.2, label="sup |u(t) - u_steady|")
        ax.semilogy(t, np.maximum(np.asarray(norms, dtype=float), 1e-300), lw=1.2,
                    label="sup |u(t)|")
        ax.set_xlabel("t")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_allocation(x: np.ndarray, u: np.ndarray, theta: np.ndarray, demand: np.ndarray,
                    supply: float, path) -> Path:
    """Price, holding and demand on two stacked panels (NaN gaps are left blank)."""
    with plt.rc_context(_STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.6))
        top.plot(x, u, lw=1.4, label="price u")
        top.plot(x, theta, lw=1.2, label="holding theta")
        top.legend()
        bottom.plot(x, demand, lw=1.2, label="demand")
        bottom.axhline(supply, color="0.4", ls="--", lw=1.0, label="supply K")
        bottom.set_xlabel("x")
        bottom.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_threshold(shifts: Sequence[float], lambdas: Sequence[float], threshold, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(shifts, lambdas, marker=".", lw=1.2)
        ax.axhline(0.0, color="0.4", lw=0.8)
        if threshold is not None:
            ax.axvline(threshold, color="0.4", ls="--", lw=1.0,
                       label=f"threshold = {threshold:.8g}")
            ax.legend()
        ax.set_xlabel("shift of r0")
        ax.set_ylabel("lambda1")
        fig.tight_layout()
        return _save(fig, path)
