"""Occupancy grids: the mutable log-odds map and the matcher's quantized views.

Arrays are indexed ``[j, i]`` (row = y cell, column = x cell). ``origin`` is
the world coordinate of the low corner of cell (0, 0).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from scipy.ndimage import maximum_filter1d
from scipy.special import expit, logit

from .errors import WindowTooLarge, reject_unknown_keys
from .geometry import Pose2D, Scan
from .kernels import trace_misses

logger = logging.getLogger(__name__)

MAX_WINDOW_CELLS = 320
GROW_CHUNK = 64
LAYOUT_ROW_MAJOR = "row_major"
LAYOUT_REARRANGED = "rearranged"


@dataclass
class OccupancyModel:
    hit: float = 0.85
    miss: float = 0.4
    l_min: float = -10.0
    l_max: float = 10.0

    def __post_init__(self) -> None:
        if self.hit <= 0 or self.miss < 0:
            raise ValueError(f"hit must be positive and miss non-negative, got {self.hit}, {self.miss}")
        if self.l_min >= self.l_max:
            raise ValueError(f"l_min {self.l_min} must be below l_max {self.l_max}")

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "OccupancyModel":
        reject_unknown_keys("map.model", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, float]:
        return {"hit": self.hit, "miss": self.miss, "l_min": self.l_min, "l_max": self.l_max}


@dataclass(eq=False)
class GridMap:
    log_odds: np.ndarray
    resolution: float = 0.05
    origin: Tuple[float, float] = (0.0, 0.0)
    grow_chunk: int = GROW_CHUNK

    def __post_init__(self) -> None:
        if self.grow_chunk < 1:
            raise ValueError(f"grow_chunk must be >= 1, got {self.grow_chunk}")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.log_odds = np.asarray(self.log_odds, dtype=np.float64)
        if self.log_odds.ndim != 2:
            raise ValueError("log_odds must be a 2D array")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @classmethod
    def empty(
        cls,
        width: int,
        height: int,
        resolution: float = 0.05,
        origin: Tuple[float, float] = (0.0, 0.0),
    ) -> "GridMap":
        return cls(np.zeros((height, width), dtype=np.float64), resolution, origin)

    @classmethod
    def centered(cls, center: Pose2D, size_m: float = 20.0, resolution: float = 0.05) -> "GridMap":
        cells = int(math.ceil(size_m / resolution))
        half = cells // 2
        origin = (center.x - half * resolution, center.y - half * resolution)
        return cls.empty(cells, cells, resolution, origin)

    @classmethod
    def from_probabilities(
        cls,
        probabilities: np.ndarray,
        resolution: float = 0.05,
        origin: Tuple[float, float] = (0.0, 0.0),
        model: OccupancyModel | None = None,
    ) -> "GridMap":
        model = model or OccupancyModel()
        p = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            values = np.clip(logit(p), model.l_min, model.l_max)
        return cls(values, resolution, origin)

    @property
    def width(self) -> int:
        return int(self.log_odds.shape[1])

    @property
    def height(self) -> int:
        return int(self.log_odds.shape[0])

    def probabilities(self) -> np.ndarray:
        return expit(self.log_odds)

    def probability(self, i: int, j: int) -> float:
        if 0 <= i < self.width and 0 <= j < self.height:
            return float(expit(self.log_odds[j, i]))
        return 0.0

    def world_to_cell(self, x: float, y: float) -> Tuple[int, int]:
        return (
            math.floor((x - self.origin[0]) / self.resolution),
            math.floor((y - self.origin[1]) / self.resolution),
        )

    def copy(self) -> "GridMap":
        return GridMap(self.log_odds.copy(), self.resolution, self.origin, self.grow_chunk)

    def crop(self, center: Tuple[float, float], radius: float) -> "GridMap":
        """Copy of the square region within ``radius`` metres of ``center``."""
        ci, cj = self.world_to_cell(*center)
        half = int(math.ceil(radius / self.resolution))
        i0, i1 = max(0, ci - half), min(self.width, ci + half + 1)
        j0, j1 = max(0, cj - half), min(self.height, cj + half + 1)
        if i0 >= i1 or j0 >= j1:
            return GridMap.empty(1, 1, self.resolution, (center[0], center[1]))
        origin = (self.origin[0] + i0 * self.resolution, self.origin[1] + j0 * self.resolution)
        return GridMap(self.log_odds[j0:j1, i0:i1].copy(), self.resolution, origin)

    def _grow(self, i_min: int, i_max: int, j_min: int, j_max: int) -> Tuple[int, int]:
        """Extend the array so the given cell range is in bounds; returns the low-side shift."""

        def chunks(n: int) -> int:
            return int(math.ceil(n / self.grow_chunk)) * self.grow_chunk if n > 0 else 0

        left = chunks(-i_min)
        right = chunks(i_max - (self.width - 1))
        bottom = chunks(-j_min)
        top = chunks(j_max - (self.height - 1))
        if not (left or right or bottom or top):
            return 0, 0
        self.log_odds = np.pad(self.log_odds, ((bottom, top), (left, right)))
        self.origin = (self.origin[0] - left * self.resolution, self.origin[1] - bottom * self.resolution)
        logger.debug("grid grown to %dx%d", self.width, self.height)
        return left, bottom


def update_map(
    grid: GridMap,
    scan: Scan,
    pose: Pose2D,
    model: OccupancyModel | None = None,
) -> GridMap:
    """Integrate a posed scan in place and return the map.

    Each cell changes at most once per scan: endpoint cells gain ``hit``,
    traversed cells that are not endpoints of this scan lose ``miss``.
    """
    if len(scan) == 0:
        return grid
    model = model or OccupancyModel()
    pts = scan.endpoints(pose)
    ei = np.floor((pts[:, 0] - grid.origin[0]) / grid.resolution).astype(np.int64)
    ej = np.floor((pts[:, 1] - grid.origin[1]) / grid.resolution).astype(np.int64)
    si, sj = grid.world_to_cell(pose.x, pose.y)

    shift_i, shift_j = grid._grow(
        min(int(ei.min()), si), max(int(ei.max()), si), min(int(ej.min()), sj), max(int(ej.max()), sj)
    )
    ei += shift_i
    ej += shift_j
    si += shift_i
    sj += shift_j

    i0, i1 = min(int(ei.min()), si), max(int(ei.max()), si) + 1
    j0, j1 = min(int(ej.min()), sj), max(int(ej.max()), sj) + 1
    traversed = np.zeros((j1 - j0, i1 - i0), dtype=np.uint8)
    trace_misses(si - i0, sj - j0, ei - i0, ej - j0, traversed)
    hits = np.zeros(traversed.shape, dtype=bool)
    hits[ej - j0, ei - i0] = True
    misses = traversed.astype(bool) & ~hits

    region = grid.log_odds[j0:j1, i0:i1]
    region[misses] = np.clip(region[misses] - model.miss, model.l_min, model.l_max)
    region[hits] = np.clip(region[hits] + model.hit, model.l_min, model.l_max)
    return grid


def to_uint8(probabilities: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
    return np.floor(p * 255.0).astype(np.uint8)


def quantize_probabilities(probabilities: np.ndarray) -> np.ndarray:
    """Probability -> 8-bit -> high-order 6 bits."""
    return to_uint8(probabilities) >> 2


@dataclass(frozen=True, eq=False)
class QuantizedMap:
    cells: np.ndarray
    resolution: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2D array")
        height, width = cells.shape
        if width > MAX_WINDOW_CELLS or height > MAX_WINDOW_CELLS:
            raise WindowTooLarge(f"quantized map {width}x{height} exceeds {MAX_WINDOW_CELLS}x{MAX_WINDOW_CELLS}")
        if cells.size and int(cells.max()) > 63:
            raise ValueError(f"quantized cell value {int(cells.max())} exceeds 63")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def from_uint8(cls, values: np.ndarray, resolution: float, origin: Tuple[float, float] = (0.0, 0.0)) -> "QuantizedMap":
        return cls(np.asarray(values, dtype=np.uint8) >> 2, resolution, origin)

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    def to_uint8(self) -> np.ndarray:
        return (self.cells.astype(np.uint8) << 2).astype(np.uint8)

    def value(self, i: int, j: int) -> int:
        if 0 <= i < self.width and 0 <= j < self.height:
            return int(self.cells[j, i])
        return 0


def quantize(
    grid: GridMap,
    center: Tuple[float, float],
    width: int = MAX_WINDOW_CELLS,
    height: int = MAX_WINDOW_CELLS,
) -> QuantizedMap:
    """Crop a window centred on ``center`` (clamped to the map) and quantize it."""
    if width > MAX_WINDOW_CELLS or height > MAX_WINDOW_CELLS:
        raise WindowTooLarge(f"window {width}x{height} exceeds {MAX_WINDOW_CELLS}x{MAX_WINDOW_CELLS}")
    if width < 1 or height < 1:
        raise ValueError(f"window must be at least 1x1, got {width}x{height}")
    ci, cj = grid.world_to_cell(center[0], center[1])
    w = min(width, grid.width)
    h = min(height, grid.height)
    i0 = int(np.clip(ci - w // 2, 0, grid.width - w))
    j0 = int(np.clip(cj - h // 2, 0, grid.height - h))
    probs = expit(grid.log_odds[j0 : j0 + h, i0 : i0 + w])
    origin = (grid.origin[0] + i0 * grid.resolution, grid.origin[1] + j0 * grid.resolution)
    return QuantizedMap(quantize_probabilities(probs), grid.resolution, origin)


@dataclass(frozen=True, eq=False)
class CoarseMap:
    """Sliding-window maximum of a quantized map.

    Logical cell (i, j) is stored at ``[j + offset, i + offset]`` with
    ``offset = w - 1``, so the bound also holds for blocks that start left of or
    below the quantized window.
    """

    cells: np.ndarray
    w: int
    width: int
    height: int
    layout: str = LAYOUT_ROW_MAJOR
    blocks_per_row: int = 0
    resolution: float = 0.05
    origin: Tuple[float, float] = (0.0, 0.0)

    @property
    def offset(self) -> int:
        return self.w - 1

    def values(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Vectorized read; out-of-range cells read as 0."""
        ii = np.asarray(i, dtype=np.int64) + self.offset
        jj = np.asarray(j, dtype=np.int64) + self.offset
        valid = (ii >= 0) & (ii < self.width) & (jj >= 0) & (jj < self.height)
        out = np.zeros(ii.shape, dtype=np.int64)
        cols = ii[valid]
        if self.layout == LAYOUT_REARRANGED:
            cols = (cols % self.w) * self.blocks_per_row + cols // self.w
        out[valid] = self.cells[jj[valid], cols]
        return out

    def value(self, i: int, j: int) -> int:
        return int(self.values(np.array([i]), np.array([j]))[0])


def build_coarse(qmap: QuantizedMap, w: int = 8) -> CoarseMap:
    """M'(i, j) = max of M over the w x w block starting at (i, j).

    Computed as column-wise maxima followed by row-wise maxima.
    """
    if w < 1:
        raise ValueError(f"block size must be >= 1, got {w}")
    offset = w - 1
    padded = np.pad(qmap.cells, ((offset, 0), (offset, 0)))
    column_max = maximum_filter1d(padded, size=w, axis=0, mode="constant", cval=0, origin=-(w // 2))
    coarse = maximum_filter1d(column_max, size=w, axis=1, mode="constant", cval=0, origin=-(w // 2))
    height, width = coarse.shape
    return CoarseMap(
        cells=coarse.astype(np.uint8),
        w=w,
        width=width,
        height=height,
        resolution=qmap.resolution,
        origin=qmap.origin,
    )


def rearrange_columns(values: np.ndarray, w: int) -> np.ndarray:
    """Group columns by residue mod w: column c moves to (c % w) * ceil(W / w) + c // w."""
    values = np.asarray(values)
    width = values.shape[-1]
    blocks = int(math.ceil(width / w))
    out = np.zeros(values.shape[:-1] + (blocks * w,), dtype=values.dtype)
    cols = np.arange(width)
    out[..., (cols % w) * blocks + cols // w] = values
    return out


def restore_columns(values: np.ndarray, w: int, width: int) -> np.ndarray:
    values = np.asarray(values)
    blocks = int(math.ceil(width / w))
    cols = np.arange(width)
    return values[..., (cols % w) * blocks + cols // w]


def rearrange_coarse(coarse: CoarseMap, w: int | None = None) -> CoarseMap:
    if coarse.layout == LAYOUT_REARRANGED:
        raise ValueError("coarse map is already rearranged")
    w = coarse.w if w is None else w
    if w != coarse.w:
        raise ValueError(f"rearrangement block {w} differs from coarse block {coarse.w}")
    return CoarseMap(
        cells=rearrange_columns(coarse.cells, w),
        w=w,
        width=coarse.width,
        height=coarse.height,
        layout=LAYOUT_REARRANGED,
        blocks_per_row=int(math.ceil(coarse.width / w)),
        resolution=coarse.resolution,
        origin=coarse.origin,
    )


def probabilities_to_gray(probabilities: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * (1.0 - p)).astype(np.uint8)


def map_to_gray(grid: GridMap) -> np.ndarray:
    """Image rows run top-down, so the highest map row comes first."""
    return np.flipud(probabilities_to_gray(grid.probabilities()))


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    height, width = gray.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + gray.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM (P5) image")
    width, height = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f"unsupported PGM max value {parts[2]!r}")
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"PGM payload has {pixels.size} bytes, expected {width * height}")
    return pixels.reshape(height, width).copy()


def write_pgm(path: Path, gray: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(gray))
    return path


def map_metadata(grid: GridMap) -> Dict[str, object]:
    """Geometry a PGM file does not carry."""
    return {
        "resolution": grid.resolution,
        "origin": [grid.origin[0], grid.origin[1]],
        "width": grid.width,
        "height": grid.height,
    }


def grid_from_gray(gray: np.ndarray, resolution: float = 0.05, origin: Tuple[float, float] = (0.0, 0.0)) -> GridMap:
    """Inverse of ``map_to_gray`` up to the 8-bit quantization."""
    probabilities = 1.0 - np.flipud(np.asarray(gray, dtype=np.float64)) / 255.0
    return GridMap.from_probabilities(probabilities, resolution, origin)
