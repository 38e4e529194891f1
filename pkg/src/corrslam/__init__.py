"""2D LiDAR SLAM built on correlative scan matching."""

__version__ = "0.1.0"

from . import (  # noqa: E402
    bench,
    config,
    csm,
    errors,
    fixedpoint,
    geometry,
    gridmap,
    invariants,
    io,
    metrics,
    packets,
    pipeline,
    plots,
    posegraph,
    presets,
    refine,
    slam_graph,
    slam_hector,
    slam_pf,
    synthetic,
)

__all__ = [
    "bench",
    "config",
    "csm",
    "errors",
    "fixedpoint",
    "geometry",
    "gridmap",
    "invariants",
    "io",
    "metrics",
    "packets",
    "pipeline",
    "plots",
    "posegraph",
    "presets",
    "refine",
    "slam_graph",
    "slam_hector",
    "slam_pf",
    "synthetic",
]
