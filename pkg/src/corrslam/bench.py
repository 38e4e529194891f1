"""Matcher throughput on the standard query.

The standard query is a 320x320 window of the rasterized loop world, a
360-beam scan taken at the start pose (no-return beams included), a prior
offset by a few centimetres
and a 0.25 m / 0.25 rad window with w = 8.
"""
from __future__ import annotations

import logging
import statistics
import time
from dataclasses import replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .csm import METHODS, CsmEngine, MatchQuery, MatchResult, SearchWindow, default_delta_theta
from .fixedpoint import FixedScan
from .geometry import Pose2D, compose
from .gridmap import quantize
from .synthetic import LidarModel, loop_world, rasterize, sense

logger = logging.getLogger(__name__)

STANDARD_WINDOW = (0.25, 0.25, 0.25)
BENCH_COLUMNS = ["method", "median_s", "speedup", "score", "nx", "ny", "ntheta", "num_score_evals", "coarse_evals", "fine_evals"]


def standard_query(
    seed: int = 0,
    num_points: int = 360,
    window: Tuple[float, float, float] = STANDARD_WINDOW,
    resolution: float = 0.05,
    w: int = 8,
) -> MatchQuery:
    world = loop_world(range_noise=0.0)
    world = replace(world, lidar=LidarModel(max_range=world.lidar.max_range, num_beams=num_points))
    grid = rasterize(world.segments, resolution, margin=2.0)
    truth = world.trajectory[0]
    # no-return beams stay; their endpoints read 0 off the map
    scan = sense(world, truth)

    rng = np.random.default_rng(seed)
    dx, dy = rng.uniform(-0.1, 0.1, 2)
    xi0 = compose(truth, Pose2D(float(dx), float(dy), float(rng.uniform(-0.1, 0.1))))
    delta_theta = default_delta_theta(resolution, scan.max_range)
    return MatchQuery(
        map=quantize(grid, (xi0.x, xi0.y)),
        scan=FixedScan.from_scan(scan),
        xi0=xi0,
        window=SearchWindow.from_metric(*window, resolution, delta_theta, w),
    )


def time_method(method: str, query: MatchQuery, repeats: int = 20) -> Tuple[float, MatchResult]:
    """Median wall time of a fresh engine answering ``query`` (map and scan load included)."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    timings: List[float] = []
    result = None
    for _ in range(repeats):
        engine = CsmEngine(method, name=f"bench-{method}")
        start = time.perf_counter()
        result = engine.match(query)
        timings.append(time.perf_counter() - start)
    return statistics.median(timings), result


def benchmark(query: MatchQuery, repeats: int = 20, methods: Sequence[str] = METHODS) -> pd.DataFrame:
    """One row per matcher; ``speedup`` is relative to the oracle when it was timed."""
    measured: Dict[str, Tuple[float, MatchResult]] = {}
    for method in methods:
        # warm-up run compiles the kernels
        CsmEngine(method).match(query)
        measured[method] = time_method(method, query, repeats)
        logger.debug("%s: median %.4f s", method, measured[method][0])

    baseline = measured["oracle"][0] if "oracle" in measured else None
    rows = []
    for method, (median, result) in measured.items():
        nx, ny, ntheta = result.best_steps
        rows.append(
            {
                "method": method,
                "median_s": median,
                "speedup": baseline / median if baseline and median > 0 else float("nan"),
                "score": result.score,
                "nx": nx,
                "ny": ny,
                "ntheta": ntheta,
                "num_score_evals": result.num_score_evals,
                "coarse_evals": result.coarse_evals,
                "fine_evals": result.fine_evals,
            }
        )
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def results_agree(table: pd.DataFrame) -> bool:
    """True when every timed matcher found the same pose and score."""
    return len(table[["score", "nx", "ny", "ntheta"]].drop_duplicates()) <= 1
