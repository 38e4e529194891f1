"""Particle-filter SLAM with a scan-matching proposal.

Each particle carries a pose, its own occupancy grid and its trajectory. A
step propagates every particle by odometry plus Gaussian noise, matches the
scan against the particle's map around that prediction, polishes the pose
with a hill climb, and reweights by the match score. Particles are split in
two halves, each served by its own ``CsmEngine``; within a half the scan is
loaded once and reused while the map changes per particle.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .csm import CsmEngine, MatchQuery, MatchResult, SearchWindow, default_delta_theta
from .errors import EmptyScan, reject_unknown_keys
from .fixedpoint import FixedScan
from .geometry import Pose2D, Scan, compose
from .gridmap import GridMap, OccupancyModel, quantize, update_map
from .logs import PhaseTimer
from .refine import hill_climb

logger = logging.getLogger(__name__)


@dataclass
class PfConfig:
    num_particles: int = 16
    resample_threshold: float = 0.5
    sigma_w: float = 8.0
    window: Tuple[float, float, float] = (0.25, 0.25, 0.25)
    motion_noise: Tuple[float, float, float] = (0.02, 0.02, 0.01)
    resolution: float = 0.05
    delta_theta: Optional[float] = None
    block: int = 8
    engines: int = 2
    refine: bool = True
    map_size: float = 20.0
    method: str = "optimized"

    def __post_init__(self) -> None:
        self.window = tuple(float(v) for v in self.window)
        self.motion_noise = tuple(float(v) for v in self.motion_noise)
        if self.num_particles < 1:
            raise ValueError(f"num_particles must be >= 1, got {self.num_particles}")
        if not 0.0 <= self.resample_threshold <= 1.0:
            raise ValueError(f"resample_threshold must be in [0, 1], got {self.resample_threshold}")
        if self.sigma_w <= 0:
            raise ValueError(f"sigma_w must be positive, got {self.sigma_w}")
        if len(self.window) != 3 or len(self.motion_noise) != 3:
            raise ValueError("window and motion_noise take three values (x, y, theta)")
        if any(v < 0 for v in self.motion_noise):
            raise ValueError(f"motion noise must be non-negative, got {self.motion_noise}")
        if self.engines not in (1, 2):
            raise ValueError(f"engines must be 1 or 2, got {self.engines}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PfConfig":
        reject_unknown_keys("pf", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["window"] = list(self.window)
        out["motion_noise"] = list(self.motion_noise)
        return out


@dataclass(eq=False)
class Particle:
    pose: Pose2D
    map: GridMap
    trajectory: List[Pose2D]
    weight: float

    def clone(self) -> "Particle":
        return Particle(self.pose, self.map.copy(), list(self.trajectory), self.weight)


@dataclass
class PfStepStats:
    scores: List[int]
    n_eff: float
    resampled: bool
    all_zero: bool
    num_score_evals: int
    phase_seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def best_score(self) -> int:
        return max(self.scores) if self.scores else 0


@dataclass(eq=False)
class PfState:
    config: PfConfig
    particles: List[Particle]
    rng: np.random.Generator
    engines: List[CsmEngine]
    model: OccupancyModel
    timestamps: List[float] = field(default_factory=list)
    steps: int = 0
    resamples: int = 0
    last_stats: Optional[PfStepStats] = None

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.particles], dtype=np.float64)


def init_pf(
    config: PfConfig,
    first_scan: Scan,
    pose0: Pose2D = Pose2D(),
    seed: int = 0,
    model: Optional[OccupancyModel] = None,
) -> PfState:
    """All particles start at ``pose0`` with a map built from the first scan."""
    model = model or OccupancyModel()
    grid = GridMap.centered(pose0, config.map_size, config.resolution)
    update_map(grid, first_scan, pose0, model)
    weight = 1.0 / config.num_particles
    particles = [Particle(pose0, grid.copy(), [pose0], weight) for _ in range(config.num_particles)]
    engines = [CsmEngine(config.method, name=f"pf-{k}") for k in range(config.engines)]
    return PfState(
        config=config,
        particles=particles,
        rng=np.random.default_rng(seed),
        engines=engines,
        model=model,
        timestamps=[first_scan.timestamp],
    )


def effective_sample_size(weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def resample_systematic(
    weights: Sequence[float],
    rng: Optional[np.random.Generator] = None,
    u: Optional[float] = None,
) -> np.ndarray:
    """Low-variance resampling: one draw u in [0, 1), pointers (u + k) / P."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1D sequence")
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        raise ValueError(f"weights must have a positive finite sum, got {total}")
    count = w.size
    if u is None:
        u = (rng or np.random.default_rng()).random()
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must be in [0, 1), got {u}")
    cumulative = np.cumsum(w / total)
    cumulative[-1] = 1.0
    pointers = (u + np.arange(count)) / count
    return np.minimum(np.searchsorted(cumulative, pointers, side="right"), count - 1)


def search_window(config: PfConfig, scan: Scan) -> SearchWindow:
    delta_theta = config.delta_theta or default_delta_theta(config.resolution, scan.max_range)
    return SearchWindow.from_metric(*config.window, config.resolution, delta_theta, config.block)


def _sample_noise(state: PfState) -> np.ndarray:
    count = len(state.particles)
    sigma = np.asarray(state.config.motion_noise)
    if not np.any(sigma > 0):
        return np.zeros((count, 3))
    return state.rng.normal(0.0, 1.0, size=(count, 3)) * sigma


def _match_group(
    engine: CsmEngine,
    members: Sequence[int],
    particles: Sequence[Particle],
    predicted: Sequence[Pose2D],
    scan: FixedScan,
    window: SearchWindow,
) -> List[Tuple[int, MatchResult]]:
    out = []
    for n, k in enumerate(members):
        qmap = quantize(particles[k].map, (predicted[k].x, predicted[k].y))
        query = MatchQuery(
            map=qmap,
            scan=None if n else scan,
            xi0=predicted[k],
            window=window,
            reuse_scan=n > 0,
        )
        out.append((k, engine.match(query)))
    return out


def pf_step(state: PfState, scan: Scan, odometry_delta: Pose2D) -> PfState:
    """Advance every particle by one scan; weights accumulate as w * exp(s / (sigma_w * N))."""
    if len(scan) == 0:
        raise EmptyScan("particle filter step needs a non-empty scan")
    cfg = state.config
    timer = PhaseTimer()
    count = len(state.particles)

    noise = _sample_noise(state)
    predicted = [
        compose(compose(p.pose, odometry_delta), Pose2D(*noise[k])) for k, p in enumerate(state.particles)
    ]
    window = search_window(cfg, scan)
    fixed = FixedScan.from_scan(scan)
    groups = [g for g in np.array_split(np.arange(count), len(state.engines)) if g.size]

    with timer.phase("scan_matching"):
        if len(groups) == 1:
            matched = _match_group(state.engines[0], groups[0].tolist(), state.particles, predicted, fixed, window)
        else:
            with ThreadPoolExecutor(max_workers=len(groups)) as pool:
                futures = [
                    pool.submit(_match_group, engine, g.tolist(), state.particles, predicted, fixed, window)
                    for engine, g in zip(state.engines, groups)
                ]
                matched = [item for f in futures for item in f.result()]
    results = dict(matched)

    scores = np.array([results[k].score for k in range(count)], dtype=np.float64)
    with timer.phase("refinement"):
        poses = []
        for k, particle in enumerate(state.particles):
            result = results[k]
            if result.score == 0:
                poses.append(predicted[k])
            elif cfg.refine:
                step = (cfg.resolution / 2.0, window.delta_theta / 2.0)
                poses.append(hill_climb(particle.map, scan, result.pose, step=step).pose)
            else:
                poses.append(result.pose)

    all_zero = not np.any(scores > 0)
    if all_zero:
        logger.debug("step %d: all particle scores are zero, weights reset to uniform", state.steps + 1)
        weights = np.full(count, 1.0 / count)
    else:
        with np.errstate(divide="ignore"):
            log_w = np.log(state.weights) + scores / (cfg.sigma_w * len(scan))
        weights = np.exp(log_w - logsumexp(log_w))
        weights /= weights.sum()

    for particle, pose, weight in zip(state.particles, poses, weights):
        particle.pose = pose
        particle.trajectory.append(pose)
        particle.weight = float(weight)

    n_eff = effective_sample_size(weights)
    resampled = n_eff < cfg.resample_threshold * count
    if resampled:
        with timer.phase("resampling"):
            parents = resample_systematic(weights, state.rng)
            used = set()
            survivors = []
            for parent in parents.tolist():
                source = state.particles[parent]
                child = source if parent not in used else source.clone()
                used.add(parent)
                child.weight = 1.0 / count
                survivors.append(child)
            state.particles = survivors
            state.resamples += 1

    with timer.phase("map_update"):
        for particle in state.particles:
            update_map(particle.map, scan, particle.pose, state.model)

    state.timestamps.append(scan.timestamp)
    state.steps += 1
    state.last_stats = PfStepStats(
        scores=[int(s) for s in scores],
        n_eff=n_eff,
        resampled=resampled,
        all_zero=all_zero,
        num_score_evals=sum(r.num_score_evals for r in results.values()),
        phase_seconds=timer.as_dict(),
    )
    logger.debug(
        "pf step %d: best score %d, n_eff %.2f%s",
        state.steps,
        state.last_stats.best_score,
        n_eff,
        ", resampled" if resampled else "",
    )
    return state


def best_particle(state: PfState) -> Tuple[List[Pose2D], GridMap]:
    if not state.particles:
        raise ValueError("particle set is empty")
    k = int(np.argmax(state.weights))
    best = state.particles[k]
    return best.trajectory, best.map


def mean_pose(state: PfState) -> Pose2D:
    """Weighted mean with a circular mean for the heading."""
    w = state.weights
    xs = np.array([p.pose.x for p in state.particles])
    ys = np.array([p.pose.y for p in state.particles])
    ts = np.array([p.pose.theta for p in state.particles])
    return Pose2D(float(w @ xs), float(w @ ys), math.atan2(float(w @ np.sin(ts)), float(w @ np.cos(ts))))
