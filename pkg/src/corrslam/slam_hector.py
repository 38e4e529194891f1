"""Hector-style scan-to-map tracking, original and robustified.

The original variant runs Gauss-Newton coarse to fine over a map pyramid,
seeding each level with the previous level's pose. The robust variant keeps
only the finest map, finds a global seed with correlative scan matching
around the previous pose and then refines it with Gauss-Newton.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .csm import CsmEngine, MatchQuery, MatchResult, SearchWindow, default_delta_theta
from .errors import EmptyScan, reject_unknown_keys
from .fixedpoint import FixedScan
from .geometry import Pose2D, Scan
from .gridmap import GROW_CHUNK, GridMap, OccupancyModel, quantize, update_map
from .logs import PhaseTimer
from .refine import InterpolatedMapView, cost, gauss_newton

logger = logging.getLogger(__name__)


@dataclass
class HectorConfig:
    levels: int = 3
    robust: bool = False
    window: Tuple[float, float, float] = (0.25, 0.25, 0.25)
    resolution: float = 0.05
    delta_theta: Optional[float] = None
    block: int = 8
    max_iters: int = 30
    eps: float = 1e-4
    split: bool = True
    map_size: float = 20.0
    method: str = "optimized"

    def __post_init__(self) -> None:
        self.window = tuple(float(v) for v in self.window)
        if len(self.window) != 3:
            raise ValueError(f"window takes three values (x, y, theta), got {len(self.window)}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if GROW_CHUNK % (1 << (self.levels - 1)):
            raise ValueError(f"{self.levels} levels do not divide the growth chunk {GROW_CHUNK}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HectorConfig":
        reject_unknown_keys("hector", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["window"] = list(self.window)
        return out

    @property
    def effective_levels(self) -> int:
        return 1 if self.robust else self.levels


class MapPyramid:
    """Grids at resolutions r, 2r, ... sharing one origin.

    Level k grows in chunks of ``GROW_CHUNK >> k`` cells, the same distance
    in metres at every level, so the origins stay equal as the maps grow.
    """

    def __init__(self, levels: List[GridMap]) -> None:
        if not levels:
            raise ValueError("a pyramid needs at least one level")
        self.levels = levels

    @classmethod
    def create(cls, center: Pose2D, size_m: float, resolution: float, n: int = 3) -> "MapPyramid":
        coarsest = resolution * (1 << (n - 1))
        cells = max(1, int(round(size_m / coarsest)))
        levels = []
        for k in range(n):
            scale = 1 << (n - 1 - k)
            res = resolution * (1 << k)
            side = cells * scale
            origin = (center.x - (cells // 2) * coarsest, center.y - (cells // 2) * coarsest)
            levels.append(GridMap.empty(side, side, res, origin))
            levels[-1].grow_chunk = GROW_CHUNK >> k
        return cls(levels)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> GridMap:
        return self.levels[0]

    def resolution(self, k: int) -> float:
        return self.levels[k].resolution

    def update(self, scan: Scan, pose: Pose2D, model: OccupancyModel) -> None:
        for grid in self.levels:
            update_map(grid, scan, pose, model)


@dataclass
class HectorStepStats:
    csm_score: int = 0
    cost_seed: float = 0.0
    cost_final: float = 0.0
    iterations: int = 0
    num_score_evals: int = 0
    phase_seconds: Dict[str, float] = field(default_factory=dict)


@dataclass(eq=False)
class HectorState:
    config: HectorConfig
    pyramid: MapPyramid
    pose: Pose2D
    model: OccupancyModel
    engines: List[CsmEngine] = field(default_factory=list)
    trajectory: List[Pose2D] = field(default_factory=list)
    timestamps: List[float] = field(default_factory=list)
    steps: int = 0
    last_stats: Optional[HectorStepStats] = None


def init_hector(
    config: Optional[HectorConfig] = None,
    first_scan: Optional[Scan] = None,
    pose0: Pose2D = Pose2D(),
    model: Optional[OccupancyModel] = None,
) -> HectorState:
    config = config or HectorConfig()
    model = model or OccupancyModel()
    pyramid = MapPyramid.create(pose0, config.map_size, config.resolution, config.effective_levels)
    engines: List[CsmEngine] = []
    if config.robust:
        engines = [CsmEngine(config.method, name=f"hector-{k}") for k in range(2 if config.split else 1)]
    state = HectorState(config=config, pyramid=pyramid, pose=pose0, model=model, engines=engines, trajectory=[pose0])
    if first_scan is not None:
        pyramid.update(first_scan, pose0, model)
        state.timestamps.append(first_scan.timestamp)
    return state


def _advance(state: HectorState, scan: Scan, pose: Pose2D, stats: HectorStepStats, timer: PhaseTimer) -> HectorState:
    with timer.phase("map_update"):
        state.pyramid.update(scan, pose, state.model)
    state.pose = pose
    state.trajectory.append(pose)
    state.timestamps.append(scan.timestamp)
    state.steps += 1
    stats.phase_seconds = timer.as_dict()
    state.last_stats = stats
    return state


def hector_original_step(state: HectorState, scan: Scan) -> HectorState:
    """Gauss-Newton from the coarsest level down to the finest."""
    if len(scan) == 0:
        raise EmptyScan("hector step needs a non-empty scan")
    cfg = state.config
    timer = PhaseTimer()
    pose = state.pose
    iterations = 0
    with timer.phase("refinement"):
        seed_cost = cost(InterpolatedMapView(state.pyramid.finest), scan, pose)
        for grid in reversed(state.pyramid.levels):
            result = gauss_newton(InterpolatedMapView(grid), scan, pose, cfg.max_iters, cfg.eps)
            pose = result.pose
            iterations += result.iterations
        final_cost = result.cost if len(state.pyramid) == 1 else cost(InterpolatedMapView(state.pyramid.finest), scan, pose)
    stats = HectorStepStats(cost_seed=seed_cost, cost_final=final_cost, iterations=iterations)
    return _advance(state, scan, pose, stats, timer)


def search_window(config: HectorConfig, scan: Scan) -> SearchWindow:
    delta_theta = config.delta_theta or default_delta_theta(config.resolution, scan.max_range)
    return SearchWindow.from_metric(*config.window, config.resolution, delta_theta, config.block)


def hector_robust_step(state: HectorState, scan: Scan) -> HectorState:
    """Correlative match around the previous pose, then Gauss-Newton on the fine map."""
    if len(scan) == 0:
        raise EmptyScan("hector step needs a non-empty scan")
    if not state.engines:
        raise ValueError("robust hector step needs at least one engine; build the state with robust=True")
    cfg = state.config
    timer = PhaseTimer()
    fine = state.pyramid.finest
    with timer.phase("scan_matching"):
        query = MatchQuery(
            map=quantize(fine, (state.pose.x, state.pose.y)),
            scan=FixedScan.from_scan(scan),
            xi0=state.pose,
            window=search_window(cfg, scan),
        )
        if len(state.engines) > 1:
            match = split_window_match(state.engines, query)
        else:
            match = state.engines[0].match(query)
    seed = match.pose if match.score > 0 else state.pose
    with timer.phase("refinement"):
        view = InterpolatedMapView(fine)
        result = gauss_newton(view, scan, seed, cfg.max_iters, cfg.eps)
    stats = HectorStepStats(
        csm_score=match.score,
        cost_seed=result.cost_history[0],
        cost_final=result.cost,
        iterations=result.iterations,
        num_score_evals=match.num_score_evals,
    )
    return _advance(state, scan, result.pose, stats, timer)


def hector_step(state: HectorState, scan: Scan) -> HectorState:
    if state.config.robust:
        return hector_robust_step(state, scan)
    return hector_original_step(state, scan)


def split_window_match(engines: Sequence[CsmEngine], query: MatchQuery) -> MatchResult:
    """Match the two halves of the heading range on two engines.

    The lower half wins ties, which keeps the single-engine tie-break.
    """
    if len(engines) < 2:
        raise ValueError(f"split matching needs two engines, got {len(engines)}")
    lo, hi = query.window.theta_bounds
    if hi - lo < 2:
        return engines[0].match(query)
    mid = lo + (hi - lo) // 2
    halves = [
        replace(query, window=query.window.with_theta_range(lo, mid)),
        replace(query, window=query.window.with_theta_range(mid, hi)),
    ]
    with ThreadPoolExecutor(max_workers=2) as pool:
        first, second = pool.map(lambda pair: pair[0].match(pair[1]), zip(engines[:2], halves))
    best = second if second.score > first.score else first
    return MatchResult(
        pose=best.pose,
        score=best.score,
        best_steps=best.best_steps,
        num_score_evals=first.num_score_evals + second.num_score_evals,
        coarse_evals=first.coarse_evals + second.coarse_evals,
        fine_evals=first.fine_evals + second.fine_evals,
    )
