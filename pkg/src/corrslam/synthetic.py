"""Line-segment worlds, a simulated 2D LiDAR and scripted trajectories.

``simulate`` produces a Carmen-style log (scans plus drifting odometry), the
ground-truth trajectory and relations sampled from it. Three scenes ship with
the package: ``loop_world`` for loop closing, ``corridor_world`` with a
scripted jump that defeats pure gradient tracking, and ``room_world`` for
short plant-and-recover runs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose2D, Scan, compose, normalize_angle, relative
from .gridmap import GridMap
from .io import LASER, LogEntry
from .metrics import Relation, relations_from_trajectory
from .presets import LaserPreset

logger = logging.getLogger(__name__)

Segment = Tuple[float, float, float, float]


@dataclass(frozen=True)
class LidarModel:
    max_range: float = 8.0
    fov_deg: float = 360.0
    start_deg: float = -180.0
    num_beams: int = 360
    range_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.max_range <= 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.range_noise < 0:
            raise ValueError(f"range_noise must be non-negative, got {self.range_noise}")

    @property
    def resolution_deg(self) -> float:
        if self.fov_deg >= 360.0 or self.num_beams == 1:
            return self.fov_deg / self.num_beams
        return self.fov_deg / (self.num_beams - 1)

    def preset(self) -> LaserPreset:
        """Laser geometry for reading the simulated log back; no-return beams are gated out."""
        return LaserPreset(
            name="synthetic",
            fov_deg=self.fov_deg,
            start_deg=self.start_deg,
            resolution_deg=self.resolution_deg,
            r_min=0.0,
            r_max=self.max_range * 0.999,
        )

    def angles(self) -> np.ndarray:
        return self.preset().angles(self.num_beams)


@dataclass
class SyntheticWorld:
    segments: np.ndarray
    lidar: LidarModel = field(default_factory=LidarModel)
    trajectory: List[Pose2D] = field(default_factory=list)
    odometry_noise: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    dt: float = 0.1
    relation_spacing: int = 1
    seed: int = 0
    name: str = "world"

    def __post_init__(self) -> None:
        segs = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(segs)):
            raise ValueError("segments must be finite")
        self.segments = segs
        self.odometry_noise = tuple(float(v) for v in self.odometry_noise)
        if any(v < 0 for v in self.odometry_noise):
            raise ValueError(f"odometry noise must be non-negative, got {self.odometry_noise}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        xs = self.segments[:, [0, 2]]
        ys = self.segments[:, [1, 3]]
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


def raycast(segments: np.ndarray, origin: Tuple[float, float], angles: np.ndarray, max_range: float) -> np.ndarray:
    """Distance to the nearest segment along each ray; ``max_range`` when nothing is hit."""
    segs = np.asarray(segments, dtype=np.float64).reshape(-1, 4)
    angles = np.asarray(angles, dtype=np.float64)
    if segs.size == 0:
        return np.full(angles.shape, float(max_range))
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    sx = (segs[:, 2] - segs[:, 0])[None, :]
    sy = (segs[:, 3] - segs[:, 1])[None, :]
    qx = (segs[:, 0] - origin[0])[None, :]
    qy = (segs[:, 1] - origin[1])[None, :]
    denom = dx * sy - dy * sx
    parallel = np.abs(denom) < 1e-12
    safe = np.where(parallel, 1.0, denom)
    t = (qx * sy - qy * sx) / safe
    u = (qx * dy - qy * dx) / safe
    hit = ~parallel & (t >= 0.0) & (u >= 0.0) & (u <= 1.0) & (t <= max_range)
    dist = np.where(hit, t, np.inf).min(axis=1)
    return np.where(np.isfinite(dist), dist, float(max_range))


def sense(world: SyntheticWorld, pose: Pose2D, rng: Optional[np.random.Generator] = None, timestamp: float = 0.0) -> Scan:
    angles = world.lidar.angles()
    ranges = raycast(world.segments, (pose.x, pose.y), angles + pose.theta, world.lidar.max_range)
    if world.lidar.range_noise > 0 and rng is not None:
        hits = ranges < world.lidar.max_range
        ranges = ranges + np.where(hits, rng.normal(0.0, world.lidar.range_noise, ranges.shape), 0.0)
        ranges = np.clip(ranges, 0.0, world.lidar.max_range)
    return Scan(ranges, angles, timestamp)


@dataclass
class SimulationResult:
    entries: List[LogEntry]
    ground_truth: List[Tuple[float, Pose2D]]
    relations: List[Relation]

    @property
    def scans(self) -> List[Scan]:
        return [e.scan for e in self.entries if e.kind == LASER]


def simulate(world: SyntheticWorld) -> SimulationResult:
    """Ray-cast every scripted pose, integrate noisy odometry, sample relations."""
    if not world.trajectory:
        raise ValueError("world has no scripted trajectory")
    x0, y0, x1, y1 = world.bounds
    for pose in world.trajectory:
        if not (x0 <= pose.x <= x1 and y0 <= pose.y <= y1):
            raise ValueError(f"trajectory pose ({pose.x:.3f}, {pose.y:.3f}) lies outside the world bounds")
    rng = np.random.default_rng(world.seed)
    sigma = np.asarray(world.odometry_noise)

    entries: List[LogEntry] = []
    truth: List[Tuple[float, Pose2D]] = []
    odom = world.trajectory[0]
    for k, pose in enumerate(world.trajectory):
        t = round(k * world.dt, 6)
        if k:
            step = relative(pose, world.trajectory[k - 1])
            if np.any(sigma > 0):
                step = compose(step, Pose2D(*(rng.normal(0.0, 1.0, 3) * sigma)))
            odom = compose(odom, step)
        scan = sense(world, pose, rng, t)
        entries.append(LogEntry(LASER, odom, t, scan, odom, world.name))
        truth.append((t, pose))
    relations = relations_from_trajectory(truth, spacing=world.relation_spacing)
    logger.debug("simulated %d scans in %s", len(entries), world.name)
    return SimulationResult(entries, truth, relations)


def box(x0: float, y0: float, x1: float, y1: float) -> List[Segment]:
    return [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)]


def waypoint_path(
    waypoints: Sequence[Tuple[float, float]],
    step: float = 0.1,
    turn_step: float = 0.2,
    heading: Optional[float] = None,
) -> List[Pose2D]:
    """Drive through ``waypoints``: turn in place toward each leg, then move along it."""
    if len(waypoints) < 2:
        raise ValueError("a path needs at least two waypoints")
    if step <= 0 or turn_step <= 0:
        raise ValueError("step and turn_step must be positive")
    x, y = waypoints[0]
    theta = math.atan2(waypoints[1][1] - y, waypoints[1][0] - x) if heading is None else heading
    poses = [Pose2D(x, y, theta)]
    for tx, ty in waypoints[1:]:
        target = math.atan2(ty - y, tx - x)
        turn = normalize_angle(target - theta)
        for _ in range(int(math.ceil(abs(turn) / turn_step - 1e-9))):
            theta += math.copysign(min(turn_step, abs(normalize_angle(target - theta))), turn)
            poses.append(Pose2D(x, y, theta))
        theta = target
        length = math.hypot(tx - x, ty - y)
        count = int(math.ceil(length / step - 1e-9))
        for k in range(1, count + 1):
            f = min(1.0, k * step / length)
            poses.append(Pose2D(x + f * (tx - x), y + f * (ty - y), theta))
        x, y = tx, ty
    return poses


def loop_world(
    laps: float = 1.7,
    step: float = 0.15,
    odometry_noise: Tuple[float, float, float] = (0.01, 0.01, 0.004),
    range_noise: float = 0.01,
    seed: int = 7,
) -> SyntheticWorld:
    """Rooms around a central block; the robot circles it ``laps`` times."""
    segments: List[Segment] = []
    segments += box(-2.0, -2.0, 14.0, 10.0)
    segments += box(2.0, 2.0, 10.0, 6.0)
    # distinct furniture per side keeps the corridors from looking alike
    segments += box(3.0, -2.0, 3.6, -1.2)
    segments += box(6.5, -2.0, 7.5, -1.5)
    segments += box(13.2, 3.0, 14.0, 3.4)
    segments += box(12.5, 8.0, 14.0, 10.0)
    segments += box(5.0, 9.0, 5.4, 10.0)
    segments += box(8.0, 9.4, 9.5, 10.0)
    segments += box(-2.0, 4.0, -1.4, 5.5)
    segments += [(-2.0, 1.0, -1.0, -2.0), (10.0, 6.0, 11.0, 7.0), (2.0, 6.0, 1.3, 6.9)]

    corners = [(0.0, 0.0), (12.0, 0.0), (12.0, 8.0), (0.0, 8.0)]
    lap_length = 40.0
    total = laps * lap_length
    waypoints = [corners[0]]
    travelled = 0.0
    k = 1
    while travelled < total - 1e-9:
        a = waypoints[-1]
        b = corners[k % 4]
        leg = math.hypot(b[0] - a[0], b[1] - a[1])
        if travelled + leg > total:
            f = (total - travelled) / leg
            b = (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))
            leg = total - travelled
        waypoints.append(b)
        travelled += leg
        k += 1
    return SyntheticWorld(
        segments=np.array(segments),
        lidar=LidarModel(max_range=8.0, num_beams=360, range_noise=range_noise),
        trajectory=waypoint_path(waypoints, step=step, turn_step=0.25),
        odometry_noise=odometry_noise,
        relation_spacing=5,
        seed=seed,
        name="loop_world",
    )


CORRIDOR_PILLAR_JITTER = (
    0.05, -0.07, 0.02, 0.08, -0.03, -0.06, 0.07, 0.0, -0.08, 0.04,
    0.06, -0.02, -0.05, 0.03, 0.08, -0.07, 0.01, -0.04, 0.05, -0.01,
    0.07, -0.06, 0.02, -0.08, 0.04, 0.0, -0.03, 0.06, -0.05, 0.08,
)


def corridor_world(
    jump_at: int = 20,
    jump: float = 0.5,
    step: float = 0.1,
    steps_after: int = 10,
    seed: int = 3,
) -> SyntheticWorld:
    """Corridor lined with near-periodic pillars (0.5 m pitch, fixed jitter).

    The robot drives along +x in ``step`` increments and, at scan
    ``jump_at``, advances an extra ``jump`` metres, so consecutive scans look
    alike under a one-pitch shift.
    """
    segments: List[Segment] = []
    segments += [(-2.0, -1.5, 16.0, -1.5), (-2.0, 1.5, 16.0, 1.5), (-2.0, -1.5, -2.0, 1.5), (16.0, -1.5, 16.0, 1.5)]
    for k, jitter in enumerate(CORRIDOR_PILLAR_JITTER):
        x = -1.0 + 0.5 * k + jitter
        segments += box(x, -1.5, x + 0.1, -1.3)
        segments += box(x - 0.02, 1.3, x + 0.08, 1.5)
    poses = []
    x = 0.0
    for k in range(jump_at + steps_after + 1):
        if k:
            x += step + (jump if k == jump_at else 0.0)
        poses.append(Pose2D(x, 0.0, 0.0))
    return SyntheticWorld(
        segments=np.array(segments),
        lidar=LidarModel(max_range=8.0, num_beams=360),
        trajectory=poses,
        seed=seed,
        name="corridor_world",
    )


def room_world(steps: int = 40, step: float = 0.05, seed: int = 11, range_noise: float = 0.0) -> SyntheticWorld:
    """A furnished 6 m x 4 m room and a short L-shaped drive."""
    segments: List[Segment] = []
    segments += box(-3.0, -2.0, 3.0, 2.0)
    segments += box(-2.4, -1.6, -1.8, -1.0)
    segments += box(1.2, 0.9, 2.2, 1.4)
    segments += [(0.5, -2.0, 0.5, -1.2), (-3.0, 0.6, -2.2, 1.4), (2.4, -2.0, 3.0, -1.3)]
    half = max(1, steps // 2)
    path = [(-1.0, -0.3), (-1.0 + half * step, -0.3), (-1.0 + half * step, -0.3 + (steps - half) * step)]
    return SyntheticWorld(
        segments=np.array(segments),
        lidar=LidarModel(max_range=6.0, num_beams=360, range_noise=range_noise),
        trajectory=waypoint_path(path, step=step, turn_step=0.3),
        seed=seed,
        name="room_world",
    )


SCENES: Dict[str, Callable[..., SyntheticWorld]] = {
    "loop_world": loop_world,
    "corridor_world": corridor_world,
    "room_world": room_world,
}


def get_scene(name: str, **kwargs) -> SyntheticWorld:
    try:
        factory = SCENES[name]
    except KeyError:
        raise ValueError(f"Unknown scene '{name}', expected one of {', '.join(sorted(SCENES))}") from None
    return factory(**kwargs)


def rasterize(
    segments: np.ndarray,
    resolution: float = 0.05,
    margin: float = 1.0,
    p_occupied: float = 0.95,
    p_free: float = 0.05,
) -> GridMap:
    """Occupancy grid with every cell a segment passes through marked occupied."""
    segs = np.asarray(segments, dtype=np.float64).reshape(-1, 4)
    x0 = float(segs[:, [0, 2]].min()) - margin
    y0 = float(segs[:, [1, 3]].min()) - margin
    x1 = float(segs[:, [0, 2]].max()) + margin
    y1 = float(segs[:, [1, 3]].max()) + margin
    width = int(math.ceil((x1 - x0) / resolution))
    height = int(math.ceil((y1 - y0) / resolution))
    probs = np.full((height, width), p_free)
    for sx0, sy0, sx1, sy1 in segs:
        n = max(2, int(math.ceil(math.hypot(sx1 - sx0, sy1 - sy0) / (resolution / 4.0))) + 1)
        xs = np.linspace(sx0, sx1, n)
        ys = np.linspace(sy0, sy1, n)
        i = np.floor((xs - x0) / resolution).astype(np.int64)
        j = np.floor((ys - y0) / resolution).astype(np.int64)
        probs[j, i] = p_occupied
    return GridMap.from_probabilities(probs, resolution, (x0, y0))
