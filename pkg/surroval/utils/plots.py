"""
SVG figures: baseline hazard and survival bands, the mediation function
and the mediation curves. Uses the non-interactive Agg backend so it works
on headless machines.
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..optimize import FitResult  # noqa: E402
from ..splines import WeibullHazard, hazard_bands  # noqa: E402

logger = logging.getLogger(__name__)

GRID_POINTS = 200


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    logger.debug("Wrote %s", path)
    return path


def baseline_frame(fit: FitResult, which: str, horizon: float, level: float = 0.05) -> pd.DataFrame:
    """
    Hazard and survival curves of one baseline ("s" or "t") with pointwise
    bands. Weibull baselines are drawn on (0, horizon] without bands.
    """
    params = fit.params
    hazard = params.baseline() if hasattr(params, "baseline") else getattr(params, f"hazard_{which}")()
    if isinstance(hazard, WeibullHazard):
        grid = np.linspace(horizon / GRID_POINTS, horizon, GRID_POINTS)
        return pd.DataFrame({"time": grid, "hazard": hazard.hazard(grid), "survival": np.exp(-hazard.cumulative(grid))})
    basis = hazard.basis
    grid = np.linspace(basis.lower, basis.upper, GRID_POINTS)
    idx = [fit.names.index(f"sqrt_coef_{which}[{k}]") for k in range(basis.n_basis)]
    sqrt_coef = fit.x[idx]
    if fit.vcov is None:
        vcov = np.zeros((len(idx), len(idx)))
    else:
        vcov = fit.vcov[np.ix_(idx, idx)]
    return hazard_bands(basis, sqrt_coef, vcov, grid, level)


def plot_baselines(frames: dict[str, pd.DataFrame], path) -> Path:
    """One row per endpoint: hazard on the left, survival on the right."""
    fig, axes = plt.subplots(len(frames), 2, figsize=(10, 3.5 * len(frames)), squeeze=False)
    for row, (label, frame) in enumerate(frames.items()):
        for col, curve in enumerate(("hazard", "survival")):
            ax = axes[row, col]
            ax.plot(frame["time"], frame[curve], color="black")
            if f"{curve}_lower" in frame:
                ax.fill_between(frame["time"], frame[f"{curve}_lower"], frame[f"{curve}_upper"], color="grey", alpha=0.3)
            ax.set_title(f"{label}: baseline {curve}")
            ax.set_xlabel("time")
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_gamma(table: pd.DataFrame, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(table["time"], table["gamma"], color="black", marker="o")
    ax.fill_between(table["time"], table["lower"], table["upper"], color="grey", alpha=0.3)
    ax.axhline(0.0, linestyle=":", color="grey")
    ax.set_xlabel("surrogate time s")
    ax.set_ylabel("gamma(s)")
    return _save(fig, Path(path))


def plot_mediation(curves: pd.DataFrame, path) -> Path:
    """Natural effects on the left, proportion of treatment effect on the right."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for name, style in (("tte", "-"), ("nde", "--"), ("nie", ":")):
        ax1.plot(curves["time"], curves[name], linestyle=style, color="black", label=name.upper())
        if f"{name}_lower" in curves:
            ax1.fill_between(curves["time"], curves[f"{name}_lower"], curves[f"{name}_upper"], alpha=0.15)
    ax1.axhline(0.0, color="grey", linewidth=0.5)
    ax1.set_xlabel("time")
    ax1.legend()

    stable = ~curves["tte_near_zero"].to_numpy(dtype=bool)
    ax2.plot(curves["time"][stable], curves["pte"][stable], color="black", marker="o")
    if "pte_lower" in curves:
        ax2.fill_between(
            curves["time"][stable], curves["pte_lower"][stable], curves["pte_upper"][stable], color="grey", alpha=0.3
        )
    ax2.set_xlabel("time")
    ax2.set_ylabel("PTE")
    fig.tight_layout()
    return _save(fig, Path(path))
