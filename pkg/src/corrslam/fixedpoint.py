"""Q16.16 fixed point and table-driven sine/cosine.

Angles are mapped to unsigned 32-bit turns; the top 14 bits index a
16384-entry sine table and the remaining 18 bits interpolate linearly between
neighbouring entries. All arithmetic after ingest is integer, so index
computation is reproducible across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import Scan

FRAC_BITS = 16
ONE = 1 << FRAC_BITS
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

LUT_BITS = 14
LUT_SIZE = 1 << LUT_BITS
TURN_BITS = 32
INTERP_BITS = TURN_BITS - LUT_BITS
INTERP_MASK = (1 << INTERP_BITS) - 1
TURN_MASK = (1 << TURN_BITS) - 1
QUARTER_TURN = 1 << (TURN_BITS - 2)
TWO_PI_FP = round(2.0 * math.pi * ONE)

# One extra entry so index + 1 never wraps.
SIN_TABLE = np.round(np.sin(2.0 * np.pi * np.arange(LUT_SIZE + 1) / LUT_SIZE) * ONE).astype(np.int64)
SIN_TABLE.setflags(write=False)


@dataclass(frozen=True)
class FixedPoint32:
    raw: int

    def __post_init__(self) -> None:
        if not INT32_MIN <= self.raw <= INT32_MAX:
            raise OverflowError(f"{self.raw} does not fit a signed 32-bit word")

    @classmethod
    def from_real(cls, value: float) -> "FixedPoint32":
        return cls(int(round(value * ONE)))

    def to_real(self) -> float:
        return self.raw / ONE


def to_fixed(values) -> np.ndarray:
    raw = np.round(np.asarray(values, dtype=np.float64) * ONE).astype(np.int64)
    if raw.size and (raw.min() < INT32_MIN or raw.max() > INT32_MAX):
        raise OverflowError("value outside the Q16.16 range")
    return raw


def from_fixed(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.int64) / ONE


def angle_to_turns(angle_fp: np.ndarray) -> np.ndarray:
    angle_fp = np.asarray(angle_fp, dtype=np.int64)
    return ((angle_fp << TURN_BITS) // TWO_PI_FP) & TURN_MASK


def _sin_turns(turns: np.ndarray) -> np.ndarray:
    idx = turns >> INTERP_BITS
    frac = turns & INTERP_MASK
    lo = SIN_TABLE[idx]
    hi = SIN_TABLE[idx + 1]
    return lo + (((hi - lo) * frac) >> INTERP_BITS)


def sin_cos_fixed(angle_fp) -> Tuple[np.ndarray, np.ndarray]:
    """Sine and cosine of Q16.16 radians, returned in Q16.16."""
    turns = angle_to_turns(angle_fp)
    return _sin_turns(turns), _sin_turns((turns + QUARTER_TURN) & TURN_MASK)


def reciprocal_fixed(value: float) -> int:
    """Q16.16 reciprocal; cell indices use a multiply so 1.0 / 0.05 stays 20."""
    return int(round(ONE / value))


@dataclass(frozen=True, eq=False)
class FixedScan:
    """Scan as the matcher sees it: f32 pairs on the wire, Q16.16 after ingest."""

    ranges32: np.ndarray
    angles32: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        r32 = np.array(self.ranges32, dtype=np.float32).reshape(-1)
        a32 = np.array(self.angles32, dtype=np.float32).reshape(-1)
        if r32.shape != a32.shape:
            raise ValueError(f"ranges and angles differ in length: {r32.size} vs {a32.size}")
        for arr in (r32, a32):
            arr.setflags(write=False)
        object.__setattr__(self, "ranges32", r32)
        object.__setattr__(self, "angles32", a32)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def from_scan(cls, scan: Scan) -> "FixedScan":
        return cls(scan.ranges, scan.angles, scan.timestamp)

    def __len__(self) -> int:
        return int(self.ranges32.size)

    @property
    def ranges(self) -> np.ndarray:
        return to_fixed(self.ranges32.astype(np.float64))

    @property
    def angles(self) -> np.ndarray:
        return to_fixed(self.angles32.astype(np.float64))

    @property
    def max_range(self) -> float:
        return float(self.ranges32.max()) if self.ranges32.size else 0.0

    def to_scan(self) -> Scan:
        return Scan(self.ranges32.astype(np.float64), self.angles32.astype(np.float64), self.timestamp)


def as_fixed_scan(scan) -> FixedScan:
    if isinstance(scan, FixedScan):
        return scan
    return FixedScan.from_scan(scan)
