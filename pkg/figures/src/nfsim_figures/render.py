"""Render training-simulation figures from the harness's CSV outputs.

Three figure kinds are supported:

- fig3: per-trial feedback and mental-state curves for a short training
  (mean across agents with standard-error bands),
- fig4: the long-training learning curves, intensity in red and
  orientation in blue, with optional shaded start/end windows,
- fig5: before/after performance heatmaps over the prior-strength grid.

The pipeline is strictly read-only over its inputs and every plotted
quantity comes from a named CSV column; only means and dispersions are
computed here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

FIGURE_IDS = ("fig3", "fig4", "fig5")

TRIAL_COLUMNS = (
    "experiment",
    "agent",
    "trial",
    "mean_intensity_idx",
    "mean_orientation_idx",
    "mean_noiseless_asi",
    "mean_feedback",
)

INTENSITY_COLOR = "tab:red"
ORIENTATION_COLOR = "tab:blue"
FEEDBACK_COLOR = "tab:green"


class FigureError(ValueError):
    """Raised on unusable inputs (bad figure id, empty data)."""


class SchemaError(FigureError):
    """Raised when an input file lacks a required column."""


@dataclass(frozen=True)
class FigureSpec:
    """What to render: figure id, input directory, output image path."""

    figure_id: str
    input_dir: Path
    output_path: Path
    shade_window: int = 10
    dpi: int = 150

    def __post_init__(self):
        if self.figure_id not in FIGURE_IDS:
            raise FigureError(f"figure id must be one of {FIGURE_IDS}, got {self.figure_id!r}")
        object.__setattr__(self, "input_dir", Path(self.input_dir))
        object.__setattr__(self, "output_path", Path(self.output_path))


def _load_trials(directory: Path) -> pd.DataFrame:
    path = directory / "trials.csv"
    if not path.exists():
        raise FigureError(f"missing input file: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in TRIAL_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"trials.csv lacks required column(s): {', '.join(missing)}")
    if frame.empty:
        raise FigureError(f"{path} contains no rows")
    return frame


def _per_trial_stats(frame: pd.DataFrame, column: str) -> pd.DataFrame:
    """Across-agent mean and standard error of one column, per trial."""
    grouped = frame.groupby("trial")[column]
    stats = grouped.agg(["mean", "std", "count"])
    stats["sem"] = (stats["std"] / np.sqrt(stats["count"])).fillna(0.0)
    return stats


def _band(ax, stats: pd.DataFrame, color: str, label: str):
    x = stats.index.to_numpy()
    ax.plot(x, stats["mean"], color=color, label=label)
    ax.fill_between(
        x,
        stats["mean"] - stats["sem"],
        stats["mean"] + stats["sem"],
        color=color,
        alpha=0.2,
        linewidth=0,
    )


def _render_trial_curves(spec: FigureSpec) -> plt.Figure:
    frame = _load_trials(spec.input_dir)
    feedback = _per_trial_stats(frame, "mean_feedback")
    asi = _per_trial_stats(frame, "mean_noiseless_asi")
    intensity = _per_trial_stats(frame, "mean_intensity_idx")
    orientation = _per_trial_stats(frame, "mean_orientation_idx")
    n_agents = frame["agent"].nunique()
    n_trials = int(frame["trial"].max()) + 1

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    _band(top, feedback, FEEDBACK_COLOR, "feedback level (0-4)")
    twin = top.twinx()
    _band(twin, asi, "tab:gray", "noiseless asymmetry")
    twin.set_ylabel("asymmetry (trained direction +)")
    twin.set_ylim(-1.05, 1.05)
    top.set_ylabel("feedback level")
    top.set_ylim(-0.1, 4.1)
    top.set_title(f"training curves, {n_agents} agents x {n_trials} trials")
    lines = top.get_lines() + twin.get_lines()
    top.legend(lines, [ln.get_label() for ln in lines], loc="lower right", fontsize=8)

    _band(bottom, intensity, INTENSITY_COLOR, "ERD intensity index (0-3)")
    _band(bottom, orientation, ORIENTATION_COLOR, "ERD orientation index (0-4)")
    if spec.figure_id == "fig4" and spec.shade_window > 0 and n_trials > 2 * spec.shade_window:
        for start in (0, n_trials - spec.shade_window):
            bottom.axvspan(start, start + spec.shade_window - 1, color="0.9", zorder=0)
    bottom.set_xlabel("trial")
    bottom.set_ylabel("mean state index")
    bottom.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


def _load_matrix(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Axis-labelled matrix CSV -> (values, intensity axis, orientation axis)."""
    if not path.exists():
        raise FigureError(f"missing input file: {path}")
    frame = pd.read_csv(path, index_col=0)
    if frame.empty:
        raise FigureError(f"{path} contains no rows")
    try:
        axis_a = frame.columns.to_numpy(dtype=float)
        axis_i = frame.index.to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: axis headers must be numeric b_pre values") from exc
    return frame.to_numpy(dtype=float), axis_i, axis_a


def _render_grid_heatmaps(spec: FigureSpec) -> plt.Figure:
    before, axis_i, axis_a = _load_matrix(spec.input_dir / "grid_before.csv")
    after, axis_i2, axis_a2 = _load_matrix(spec.input_dir / "grid_after.csv")
    if before.shape != after.shape or not np.array_equal(axis_i, axis_i2):
        raise SchemaError("grid_before.csv and grid_after.csv have mismatched axes")

    vmin = float(np.nanmin([before, after]))
    vmax = float(np.nanmax([before, after]))
    fig, axes = plt.subplots(2, 1, figsize=(6, 9))
    for ax, matrix, label in ((axes[0], before, "before"), (axes[1], after, "after")):
        image = ax.imshow(
            matrix,
            origin="lower",
            aspect="auto",
            vmin=vmin,
            vmax=vmax,
            cmap="viridis",
            extent=(axis_a[0], axis_a[-1], axis_i[0], axis_i[-1]),
        )
        ax.set_title(f"imagery performance {label} training")
        ax.set_xlabel("b_pre(orientation)")
        ax.set_ylabel("b_pre(intensity)")
        fig.colorbar(image, ax=ax, label="mean asymmetry (trained direction +)")
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> Path:
    """Render one figure and write it to the spec's output path."""
    if spec.figure_id in ("fig3", "fig4"):
        fig = _render_trial_curves(spec)
    else:
        fig = _render_grid_heatmaps(spec)
    spec.output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output_path, dpi=spec.dpi, metadata={"Software": "nfsim-figures"})
    plt.close(fig)
    return spec.output_path
