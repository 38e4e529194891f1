import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from .geometry import Pose2D
from .gridmap import GridMap, probabilities_to_gray

logger = logging.getLogger(__name__)

TRAJECTORY_COLOR = "red"


def map_figure(grid: GridMap, trajectory: Sequence[Pose2D] = (), title: str = "Grid map and trajectory") -> go.Figure:
    """Occupancy map in world coordinates with the trajectory as a red line."""
    xs = grid.origin[0] + (np.arange(grid.width) + 0.5) * grid.resolution
    ys = grid.origin[1] + (np.arange(grid.height) + 0.5) * grid.resolution
    gray = probabilities_to_gray(grid.probabilities())
    fig = px.imshow(
        gray,
        x=xs,
        y=ys,
        origin="lower",
        color_continuous_scale="gray",
        zmin=0,
        zmax=255,
        title=title,
        labels={"x": "x [m]", "y": "y [m]"},
    )
    fig.update_coloraxes(showscale=False)
    if len(trajectory):
        fig.add_trace(
            go.Scatter(
                x=[p.x for p in trajectory],
                y=[p.y for p in trajectory],
                mode="lines",
                line=dict(color=TRAJECTORY_COLOR, width=2),
                name="trajectory",
            )
        )
    fig.update_yaxes(scaleanchor="x", scaleratio=1)
    return fig


def timing_figure(breakdown: pd.DataFrame, title: str = "Time per phase") -> go.Figure:
    if breakdown.empty:
        return go.Figure()
    fig = px.bar(breakdown, x="phase", y="seconds", title=title, text=breakdown["share"].map(lambda s: f"{s:.0%}"))
    fig.update_layout(xaxis_title="Phase", yaxis_title="Seconds")
    return fig


def residual_figure(residuals: pd.DataFrame, title: str = "Translational residual per relation") -> go.Figure:
    if residuals.empty:
        return go.Figure()
    fig = px.scatter(residuals, x="t_j", y="trans", title=title, labels={"t_j": "t_j [s]", "trans": "residual [m]"})
    return fig


def export_png(fig: go.Figure, path: Path, scale: float = 1.0) -> Optional[Path]:
    """Write a PNG through kaleido; returns None when the export backend fails."""
    try:
        payload = fig.to_image(format="png", scale=scale)
    except Exception as exc:
        logger.warning("PNG export to %s failed: %s", path, exc)
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path
