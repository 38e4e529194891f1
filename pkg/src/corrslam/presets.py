"""Laser geometry per dataset.

Carmen logs carry only ranges, so beam angles come from the sensor's field of
view. With a fixed angular resolution the beams are spaced by it; otherwise
an odd reading count spans the field of view end to end (n - 1 intervals)
and an even count leaves the last interval open (n intervals).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any, Dict, Optional

import numpy as np

from .errors import ConfigError, reject_unknown_keys


@dataclass(frozen=True)
class LaserPreset:
    name: str = "custom"
    fov_deg: float = 180.0
    start_deg: float = -90.0
    resolution_deg: Optional[float] = None
    r_min: float = 0.0
    r_max: float = math.inf

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_deg <= 360.0:
            raise ValueError(f"field of view must be in (0, 360] degrees, got {self.fov_deg}")
        if self.resolution_deg is not None and self.resolution_deg <= 0:
            raise ValueError(f"angular resolution must be positive, got {self.resolution_deg}")
        if self.r_min > self.r_max:
            raise ValueError(f"r_min {self.r_min} exceeds r_max {self.r_max}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LaserPreset":
        reject_unknown_keys("laser", data, [f.name for f in fields(cls)])
        base = PRESETS.get(data.get("name", ""), cls())
        merged = {f.name: getattr(base, f.name) for f in fields(cls)}
        merged.update(data)
        return cls(**merged)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def angles(self, count: int) -> np.ndarray:
        start = math.radians(self.start_deg)
        if count <= 0:
            return np.empty(0)
        if self.resolution_deg is not None:
            step = math.radians(self.resolution_deg)
        elif count == 1:
            step = 0.0
        else:
            intervals = count - 1 if count % 2 else count
            step = math.radians(self.fov_deg) / intervals
        return start + step * np.arange(count)


PRESETS: Dict[str, LaserPreset] = {
    "sick_lms": LaserPreset("sick_lms", 180.0, -90.0, None, 0.0, 30.0),
    "hokuyo_urg_04lx": LaserPreset("hokuyo_urg_04lx", 240.0, -120.0, 0.36, 0.02, 5.6),
    "revo_lds": LaserPreset("revo_lds", 360.0, 0.0, 1.0, 0.06, 6.0),
}

DEFAULT_PRESET = "sick_lms"


def get_preset(name: str) -> LaserPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown laser preset '{name}', expected one of {', '.join(sorted(PRESETS))}") from None
