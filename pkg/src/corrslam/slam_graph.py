"""Graph-based SLAM: submap frontend, loop-closing backend.

The frontend aligns every scan against the oldest unfinished submap, appends a
node and an odometry edge, and inserts the scan into every open submap. A new
submap opens every ``submap_size // 2`` nodes, so each finished submap holds
``submap_size`` consecutive scans and neighbours overlap by half.

The backend matches recent nodes against finished submaps near them; accepted
matches become loop edges from the submap's origin node, after which the
graph is optimized and every submap is re-anchored to its optimized origin.

Two runners drive the halves: ``run_sequential`` interleaves them on one
thread, ``run_threaded`` gives each its own thread and engine and joins them
with queues. The frontend only ever sees optimized poses as snapshots.
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.neighbors import NearestNeighbors

from .csm import CsmEngine, MatchQuery, SearchWindow, default_delta_theta
from .errors import EmptyScan, reject_unknown_keys
from .fixedpoint import FixedScan
from .geometry import Pose2D, Scan, compose, relative
from .gridmap import GridMap, OccupancyModel, quantize, update_map
from .logs import PhaseTimer
from .posegraph import LOOP, OptimizeResult, PoseGraph, information_from_sigmas, optimize
from .refine import InterpolatedMapView, gauss_newton

logger = logging.getLogger(__name__)

MAX_SCORE = 63


def _triple(values: Sequence[float], name: str) -> Tuple[float, float, float]:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} takes three values (x, y, theta), got {len(out)}")
    return out  # type: ignore[return-value]


@dataclass
class LoopConfig:
    enabled: bool = True
    score_threshold: float = 0.65 * MAX_SCORE
    search_radius: float = 10.0
    window: Tuple[float, float, float] = (2.5, 2.5, 0.5)
    min_separation: int = 60
    stride: int = 5
    refine: bool = True

    def __post_init__(self) -> None:
        self.window = _triple(self.window, "loop window")
        if self.score_threshold <= 0:
            raise ValueError(f"score_threshold must be positive, got {self.score_threshold}")
        if self.search_radius <= 0:
            raise ValueError(f"search_radius must be positive, got {self.search_radius}")
        if self.min_separation < 0 or self.stride < 1:
            raise ValueError("min_separation must be >= 0 and stride >= 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LoopConfig":
        reject_unknown_keys("graph.loop", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["window"] = list(self.window)
        return out


@dataclass
class GraphConfig:
    submap_size: int = 30
    window: Tuple[float, float, float] = (0.25, 0.25, 0.5)
    resolution: float = 0.05
    delta_theta: Optional[float] = None
    block: int = 8
    odometry_sigmas: Tuple[float, float, float] = (0.05, 0.05, 0.02)
    loop_sigmas: Tuple[float, float, float] = (0.05, 0.05, 0.02)
    degenerate_score: float = 0.1 * MAX_SCORE
    degenerate_inflation: float = 100.0
    refine: bool = True
    optimize_iters: int = 20
    map_size: float = 20.0
    method: str = "optimized"
    loop: LoopConfig = field(default_factory=LoopConfig)

    def __post_init__(self) -> None:
        self.window = _triple(self.window, "frontend window")
        self.odometry_sigmas = _triple(self.odometry_sigmas, "odometry_sigmas")
        self.loop_sigmas = _triple(self.loop_sigmas, "loop_sigmas")
        if self.submap_size < 2:
            raise ValueError(f"submap_size must be >= 2, got {self.submap_size}")
        if any(s <= 0 for s in self.odometry_sigmas + self.loop_sigmas):
            raise ValueError("edge sigmas must be positive")
        if self.degenerate_inflation < 1:
            raise ValueError(f"degenerate_inflation must be >= 1, got {self.degenerate_inflation}")
        if isinstance(self.loop, dict):
            self.loop = LoopConfig.from_dict(self.loop)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GraphConfig":
        reject_unknown_keys("graph", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("window", "odometry_sigmas", "loop_sigmas"):
            out[key] = list(out[key])
        out["loop"] = self.loop.to_dict()
        return out

    @property
    def overlap_stride(self) -> int:
        return max(1, self.submap_size // 2)


@dataclass(eq=False)
class Submap:
    """A grid built in the frame of its origin node."""

    id: int
    origin_node: int
    origin: Pose2D
    grid: GridMap
    nodes: List[int] = field(default_factory=list)
    finished: bool = False

    def insert(self, scan: Scan, node: int, world_pose: Pose2D, model: OccupancyModel) -> None:
        if self.finished:
            raise RuntimeError(f"submap {self.id} is finished and cannot take more scans")
        update_map(self.grid, scan, relative(world_pose, self.origin), model)
        self.nodes.append(node)

    def center(self, poses: Sequence[Pose2D]) -> Tuple[float, float]:
        xs = [poses[k].x for k in self.nodes]
        ys = [poses[k].y for k in self.nodes]
        return float(np.mean(xs)), float(np.mean(ys))


@dataclass
class LoopClosure:
    submap: int
    i: int
    j: int
    delta: Pose2D
    information: np.ndarray
    score: float


@dataclass
class GraphStepStats:
    node: int
    score: int
    degenerate: bool
    num_score_evals: int
    phase_seconds: Dict[str, float] = field(default_factory=dict)


@dataclass
class BackendUpdate:
    """Result of one backend pass, computed against a snapshot of the graph."""

    num_nodes: int
    loops: List[LoopClosure]
    candidates: int
    poses: Optional[List[Pose2D]] = None
    chi2_history: List[float] = field(default_factory=list)
    phase_seconds: Dict[str, float] = field(default_factory=dict)


@dataclass(eq=False)
class GraphSlamState:
    config: GraphConfig
    model: OccupancyModel
    graph: PoseGraph = field(default_factory=PoseGraph)
    submaps: List[Submap] = field(default_factory=list)
    scans: List[Scan] = field(default_factory=list)
    timestamps: List[float] = field(default_factory=list)
    frontend_engine: CsmEngine = field(default_factory=lambda: CsmEngine(name="frontend"))
    backend_engine: CsmEngine = field(default_factory=lambda: CsmEngine(name="backend"))
    initial_pose: Pose2D = Pose2D()
    pending_submaps: List[int] = field(default_factory=list)
    next_query_node: int = 0
    degenerate_nodes: List[int] = field(default_factory=list)
    loop_candidates: int = 0
    loops_accepted: int = 0
    optimizations: int = 0
    chi2_log: List[List[float]] = field(default_factory=list)
    last_stats: Optional[GraphStepStats] = None
    last_backend: Optional[BackendUpdate] = None

    @property
    def trajectory(self) -> List[Pose2D]:
        return list(self.graph.nodes)


def init_graph_slam(
    config: Optional[GraphConfig] = None,
    model: Optional[OccupancyModel] = None,
    initial_pose: Pose2D = Pose2D(),
) -> GraphSlamState:
    config = config or GraphConfig()
    return GraphSlamState(
        config=config,
        model=model or OccupancyModel(),
        frontend_engine=CsmEngine(config.method, name="frontend"),
        backend_engine=CsmEngine(config.method, name="backend"),
        initial_pose=initial_pose,
    )


def _window(config: GraphConfig, extents: Tuple[float, float, float], scan: Scan) -> SearchWindow:
    delta_theta = config.delta_theta or default_delta_theta(config.resolution, scan.max_range)
    return SearchWindow.from_metric(*extents, config.resolution, delta_theta, config.block)


def _open_submap(state: GraphSlamState, node: int, pose: Pose2D) -> Submap:
    grid = GridMap.centered(Pose2D(), state.config.map_size, state.config.resolution)
    submap = Submap(id=len(state.submaps), origin_node=node, origin=pose, grid=grid)
    state.submaps.append(submap)
    return submap


def active_submap(state: GraphSlamState) -> Optional[Submap]:
    """The oldest submap still taking scans."""
    for submap in state.submaps:
        if not submap.finished:
            return submap
    return None


def _insert(state: GraphSlamState, scan: Scan, node: int, pose: Pose2D) -> None:
    cfg = state.config
    if node % cfg.overlap_stride == 0:
        _open_submap(state, node, pose)
    for submap in state.submaps:
        if submap.finished:
            continue
        submap.insert(scan, node, pose, state.model)
        if len(submap.nodes) >= cfg.submap_size:
            submap.finished = True
            state.pending_submaps.append(submap.id)
            logger.debug("submap %d finished with nodes %d..%d", submap.id, submap.nodes[0], submap.nodes[-1])


def frontend_step(state: GraphSlamState, scan: Scan, odometry_delta: Pose2D) -> GraphSlamState:
    if len(scan) == 0:
        raise EmptyScan("frontend step needs a non-empty scan")
    cfg = state.config
    timer = PhaseTimer()
    state.scans.append(scan)
    state.timestamps.append(scan.timestamp)

    if not state.graph.nodes:
        node = state.graph.add_node(state.initial_pose)
        with timer.phase("map_update"):
            _insert(state, scan, node, state.initial_pose)
        state.last_stats = GraphStepStats(node, 0, False, 0, timer.as_dict())
        return state

    prev = state.graph.nodes[-1]
    predicted = compose(prev, odometry_delta)
    submap = active_submap(state)
    local_pred = relative(predicted, submap.origin)
    window = _window(cfg, cfg.window, scan)

    with timer.phase("scan_matching"):
        qmap = quantize(submap.grid, (local_pred.x, local_pred.y))
        result = state.frontend_engine.match(
            MatchQuery(map=qmap, scan=FixedScan.from_scan(scan), xi0=local_pred, window=window)
        )

    information = information_from_sigmas(*cfg.odometry_sigmas)
    degenerate = result.score < cfg.degenerate_score * len(scan)
    if degenerate:
        pose = predicted
        information = information / cfg.degenerate_inflation
        state.degenerate_nodes.append(len(state.graph.nodes))
        logger.debug("node %d: match score %d below floor, using odometry", len(state.graph.nodes), result.score)
    else:
        local = result.pose
        if cfg.refine:
            with timer.phase("refinement"):
                refined = gauss_newton(InterpolatedMapView(submap.grid), scan, local)
                if not refined.singular:
                    local = refined.pose
        pose = compose(submap.origin, local)

    node = state.graph.add_node(pose)
    state.graph.add_edge(node - 1, node, relative(pose, prev), information)
    with timer.phase("map_update"):
        _insert(state, scan, node, pose)
    state.last_stats = GraphStepStats(node, result.score, degenerate, result.num_score_evals, timer.as_dict())
    return state


def detect_loops(
    state: GraphSlamState | BackendView,
    node_ids: Sequence[int],
    engine: Optional[CsmEngine] = None,
) -> Tuple[List[LoopClosure], int]:
    """Match each queried node against finished submaps within the search radius.

    Returns the accepted closures and the number of (node, submap) pairs
    matched. The scan is loaded once per node and reused across submaps.
    """
    cfg = state.config
    loop_cfg = cfg.loop
    engine = engine or state.backend_engine
    poses = state.graph.nodes
    finished = [s for s in state.submaps if s.finished]
    if not finished or not node_ids:
        return [], 0

    centers = np.array([s.center(poses) for s in finished])
    index = NearestNeighbors(radius=loop_cfg.search_radius).fit(centers)
    accepted: List[LoopClosure] = []
    tried = 0
    base_information = information_from_sigmas(*cfg.loop_sigmas)

    for t in node_ids:
        pose = poses[t]
        _, neighbours = index.radius_neighbors(np.array([[pose.x, pose.y]]))
        candidates = [
            finished[k] for k in sorted(neighbours[0].tolist()) if finished[k].nodes[-1] < t - loop_cfg.min_separation
        ]
        if not candidates:
            continue
        scan = state.scans[t]
        fixed = FixedScan.from_scan(scan)
        window = _window(cfg, loop_cfg.window, scan)
        for n, submap in enumerate(candidates):
            local_pred = relative(pose, submap.origin)
            qmap = quantize(submap.grid, (local_pred.x, local_pred.y))
            result = engine.match(
                MatchQuery(map=qmap, scan=None if n else fixed, xi0=local_pred, window=window, reuse_scan=n > 0)
            )
            tried += 1
            normalized = result.score / len(scan)
            if normalized <= loop_cfg.score_threshold:
                continue
            local = result.pose
            if loop_cfg.refine:
                refined = gauss_newton(InterpolatedMapView(submap.grid), scan, local)
                if not refined.singular:
                    local = refined.pose
            quality = (result.score / (MAX_SCORE * len(scan))) ** 2
            accepted.append(
                LoopClosure(
                    submap=submap.id,
                    i=submap.origin_node,
                    j=t,
                    delta=local,
                    information=base_information * quality,
                    score=normalized,
                )
            )
            logger.debug("loop: node %d -> submap %d (origin %d), score %.1f", t, submap.id, submap.origin_node, normalized)
    return accepted, tried


@dataclass(eq=False)
class BackendView:
    """Read-only slice of the state the backend works on."""

    config: GraphConfig
    graph: PoseGraph
    submaps: List[Submap]
    scans: List[Scan]
    backend_engine: CsmEngine


def snapshot(state: GraphSlamState, engine: Optional[CsmEngine] = None) -> Tuple[BackendView, List[int]]:
    """Copy what the backend needs and claim the nodes not yet queried."""
    cfg = state.config
    nodes = list(range(state.next_query_node, len(state.graph.nodes)))[:: cfg.loop.stride]
    state.next_query_node = len(state.graph.nodes)
    state.pending_submaps.clear()
    view = BackendView(
        config=cfg,
        graph=state.graph.copy(),
        submaps=[replace(s, nodes=list(s.nodes)) for s in state.submaps if s.finished],
        scans=list(state.scans),
        backend_engine=engine or state.backend_engine,
    )
    return view, nodes


def compute_backend(view: BackendView, node_ids: Sequence[int]) -> BackendUpdate:
    timer = PhaseTimer()
    update = BackendUpdate(num_nodes=len(view.graph.nodes), loops=[], candidates=0)
    if not view.config.loop.enabled:
        return update
    with timer.phase("loop_detection"):
        loops, tried = detect_loops(view, node_ids, view.backend_engine)
    update.loops, update.candidates = loops, tried
    if loops:
        for loop in loops:
            view.graph.add_edge(loop.i, loop.j, loop.delta, loop.information, kind=LOOP, score=loop.score)
        with timer.phase("optimization"):
            result: OptimizeResult = optimize(view.graph, max_iters=view.config.optimize_iters)
        update.poses = list(result.poses)
        update.chi2_history = list(result.chi2_history)
    update.phase_seconds = timer.as_dict()
    return update


def apply_backend(state: GraphSlamState, update: BackendUpdate) -> GraphSlamState:
    """Merge loop edges and optimized poses into the frontend's graph.

    Nodes added after the snapshot keep their pose relative to the last
    snapshot node.
    """
    state.last_backend = update
    state.loop_candidates += update.candidates
    if not update.loops:
        return state
    for loop in update.loops:
        state.graph.add_edge(loop.i, loop.j, loop.delta, loop.information, kind=LOOP, score=loop.score)
    state.loops_accepted += len(update.loops)
    if update.poses is not None:
        old = state.graph.nodes
        anchor_old = old[update.num_nodes - 1]
        anchor_new = update.poses[-1]
        tail = [compose(anchor_new, relative(p, anchor_old)) for p in old[update.num_nodes :]]
        state.graph.nodes = list(update.poses) + tail
        state.optimizations += 1
        state.chi2_log.append(update.chi2_history)
        for submap in state.submaps:
            submap.origin = state.graph.nodes[submap.origin_node]
        logger.info(
            "optimized %d nodes after %d loop(s): chi2 %.4g -> %.4g",
            update.num_nodes,
            len(update.loops),
            update.chi2_history[0],
            update.chi2_history[-1],
        )
    return state


def backend_step(state: GraphSlamState, force: bool = False) -> GraphSlamState:
    """Run loop detection when a submap has finished since the last pass."""
    if not state.pending_submaps and not force:
        return state
    view, nodes = snapshot(state)
    return apply_backend(state, compute_backend(view, nodes))


def global_map(state: GraphSlamState, resolution: Optional[float] = None) -> GridMap:
    """Rebuild one map from every scan at its current node pose."""
    if not state.graph.nodes:
        raise ValueError("no nodes to render")
    resolution = resolution or state.config.resolution
    grid = GridMap.centered(state.graph.nodes[0], state.config.map_size, resolution)
    for scan, pose in zip(state.scans, state.graph.nodes):
        update_map(grid, scan, pose, state.model)
    return grid


StepCallback = Callable[[GraphSlamState], None]


def run_sequential(
    state: GraphSlamState,
    scans: Sequence[Scan],
    deltas: Sequence[Pose2D],
    on_step: Optional[StepCallback] = None,
) -> GraphSlamState:
    """Frontend then backend on every scan, then a final backend pass."""
    for scan, delta in zip(scans, deltas):
        frontend_step(state, scan, delta)
        state.last_backend = None
        backend_step(state)
        if on_step is not None:
            on_step(state)
    return backend_step(state, force=True)


_STOP = object()


def run_threaded(
    state: GraphSlamState,
    scans: Sequence[Scan],
    deltas: Sequence[Pose2D],
    on_step: Optional[StepCallback] = None,
) -> GraphSlamState:
    """Frontend and backend on two threads joined by queues.

    The backend receives a snapshot when submaps have finished and replies
    with optimized poses; the frontend merges replies between scans. At most
    one job is in flight, so every snapshot already carries earlier loop
    edges. Loop timing depends on scheduling, so outputs can differ from
    ``run_sequential`` once loops are accepted.
    """
    jobs: "queue.Queue[Any]" = queue.Queue()
    replies: "queue.Queue[Any]" = queue.Queue()

    def backend() -> None:
        while True:
            job = jobs.get()
            if job is _STOP:
                return
            try:
                replies.put(compute_backend(*job))
            except BaseException as exc:
                replies.put(exc)

    def receive(block: bool) -> bool:
        try:
            reply = replies.get(block=block)
        except queue.Empty:
            return False
        if isinstance(reply, BaseException):
            raise reply
        apply_backend(state, reply)
        return True

    worker = threading.Thread(target=backend, name="corrslam-backend", daemon=True)
    worker.start()
    busy = False
    try:
        for scan, delta in zip(scans, deltas):
            if busy and receive(block=False):
                busy = False
            frontend_step(state, scan, delta)
            if state.pending_submaps and not busy and state.config.loop.enabled:
                jobs.put(snapshot(state))
                busy = True
            if on_step is not None:
                on_step(state)
        if busy:
            receive(block=True)
        jobs.put(snapshot(state))
        receive(block=True)
    finally:
        jobs.put(_STOP)
        worker.join()
    return state
