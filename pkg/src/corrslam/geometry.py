"""Pose algebra, scans and scan-to-grid projection."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import reject_unknown_keys

MAX_SCAN_POINTS = 512
TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = angle - TWO_PI * math.ceil((angle - math.pi) / TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    elif wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=np.float64)
    wrapped = angles - TWO_PI * np.ceil((angles - math.pi) / TWO_PI)
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    return np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def __iter__(self) -> Iterator[float]:
        return iter((self.x, self.y, self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose2D":
        x, y, theta = (float(v) for v in values)
        return cls(x, y, theta)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.theta))


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """a ⊕ b: apply b in the frame of a."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2D(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def relative(j: Pose2D, i: Pose2D) -> Pose2D:
    """j ⊖ i: pose j expressed in the frame of pose i."""
    c, s = math.cos(i.theta), math.sin(i.theta)
    dx, dy = j.x - i.x, j.y - i.y
    return Pose2D(c * dx + s * dy, -s * dx + c * dy, j.theta - i.theta)


@dataclass(frozen=True)
class ScanPoint:
    range: float
    angle: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.range) or self.range < 0:
            raise ValueError(f"Scan range must be finite and non-negative, got {self.range}")


class CellIndex(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True, eq=False)
class Scan:
    """Polar scan stored column-wise; arrays are read-only."""

    ranges: np.ndarray
    angles: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        ranges = np.array(self.ranges, dtype=np.float64).reshape(-1)
        angles = np.array(self.angles, dtype=np.float64).reshape(-1)
        if ranges.shape != angles.shape:
            raise ValueError(f"ranges and angles differ in length: {ranges.size} vs {angles.size}")
        if ranges.size and (not np.all(np.isfinite(ranges)) or np.any(ranges < 0)):
            raise ValueError("Scan ranges must be finite and non-negative")
        ranges.setflags(write=False)
        angles.setflags(write=False)
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def from_points(cls, points: Sequence[ScanPoint], timestamp: float = 0.0) -> "Scan":
        return cls(
            np.array([p.range for p in points], dtype=np.float64),
            np.array([p.angle for p in points], dtype=np.float64),
            timestamp,
        )

    @property
    def points(self) -> List[ScanPoint]:
        return [ScanPoint(float(r), float(a)) for r, a in zip(self.ranges, self.angles)]

    def __len__(self) -> int:
        return int(self.ranges.size)

    @property
    def max_range(self) -> float:
        return float(self.ranges.max()) if self.ranges.size else 0.0

    def endpoints(self, pose: Pose2D) -> np.ndarray:
        """World coordinates of every point, shape (N, 2)."""
        phi = self.angles + pose.theta
        return np.column_stack((self.ranges * np.cos(phi) + pose.x, self.ranges * np.sin(phi) + pose.y))


def project_point(
    xi: Pose2D,
    z: ScanPoint,
    resolution: float,
    origin: Tuple[float, float] = (0.0, 0.0),
) -> CellIndex:
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    phi = z.angle + xi.theta
    x = z.range * math.cos(phi) + xi.x - origin[0]
    y = z.range * math.sin(phi) + xi.y - origin[1]
    return CellIndex(math.floor(x / resolution), math.floor(y / resolution))


def project_points(
    xi: Pose2D,
    scan: Scan,
    resolution: float,
    origin: Tuple[float, float] = (0.0, 0.0),
) -> Tuple[np.ndarray, np.ndarray]:
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    pts = scan.endpoints(xi)
    i = np.floor((pts[:, 0] - origin[0]) / resolution).astype(np.int64)
    j = np.floor((pts[:, 1] - origin[1]) / resolution).astype(np.int64)
    return i, j


@dataclass
class PreprocessConfig:
    r_min: float = 0.0
    r_max: float = math.inf
    max_points: int = MAX_SCAN_POINTS

    def __post_init__(self) -> None:
        if self.max_points < 1 or self.max_points > MAX_SCAN_POINTS:
            raise ValueError(f"max_points must be in [1, {MAX_SCAN_POINTS}], got {self.max_points}")
        if self.r_min > self.r_max:
            raise ValueError(f"r_min {self.r_min} exceeds r_max {self.r_max}")

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "PreprocessConfig":
        reject_unknown_keys("preprocess", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, float]:
        return {"r_min": self.r_min, "r_max": self.r_max, "max_points": self.max_points}


def preprocess_scan(raw: Scan, cfg: PreprocessConfig | None = None) -> Scan:
    """Range-gate a scan, then decimate with a uniform stride to the buffer size."""
    cfg = cfg or PreprocessConfig()
    keep = (raw.ranges >= cfg.r_min) & (raw.ranges <= cfg.r_max)
    ranges, angles = raw.ranges[keep], raw.angles[keep]
    if ranges.size > cfg.max_points:
        stride = math.ceil(ranges.size / cfg.max_points)
        ranges, angles = ranges[::stride], angles[::stride]
    return Scan(ranges, angles, raw.timestamp)
