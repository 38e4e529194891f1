"""Correlative scan matching over a discrete pose window.

Three matchers share one candidate order and one tie-break (first maximum in
n_theta, block y, block x, then fine n_y, n_x order):

- ``match_oracle`` scores every candidate with no pruning and no coarse map.
- ``match_reference`` sweeps w x w blocks, pruning a block when its coarse
  bound does not exceed the running best.
- ``match_optimized`` runs the same sweep in a compiled kernel with the coarse
  loop unrolled over eight blocks and the fine stage evaluated two rows at a
  time.

A ``CsmEngine`` holds one map (with its coarse map) and one scan so repeated
queries can skip reloading either.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EmptyScan, ReuseWithoutLoad, WindowTooLarge
from .fixedpoint import FixedScan, as_fixed_scan, reciprocal_fixed, sin_cos_fixed, to_fixed, FRAC_BITS
from .geometry import CellIndex, Pose2D, Scan
from .gridmap import MAX_WINDOW_CELLS, CoarseMap, QuantizedMap, build_coarse, rearrange_coarse
from .kernels import UNROLL, match_unrolled

logger = logging.getLogger(__name__)

MAX_ORACLE_CANDIDATES = 10_000_000
METHODS = ("optimized", "reference", "oracle")


def default_delta_theta(resolution: float, max_range: float) -> float:
    """Angular step whose arc at the farthest point roughly equals one cell."""
    if max_range <= resolution:
        return resolution
    return resolution / max_range


def _axis_bounds(half: int) -> Tuple[int, int]:
    # A zero half-extent means the single offset 0.
    return (-half, half) if half > 0 else (0, 1)


@dataclass(frozen=True)
class SearchWindow:
    wx: int
    wy: int
    wtheta: int
    resolution: float
    delta_theta: float
    w: int = 8
    theta_range: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.w < 1:
            raise ValueError(f"block size must be >= 1, got {self.w}")
        if self.resolution <= 0 or self.delta_theta <= 0:
            raise ValueError("linear and angular steps must be positive")
        for name, half in (("wx", self.wx), ("wy", self.wy), ("wtheta", self.wtheta)):
            if half < 0:
                raise ValueError(f"{name} must be non-negative, got {half}")
        for name, half in (("wx", self.wx), ("wy", self.wy)):
            if 2 * half > MAX_WINDOW_CELLS:
                raise WindowTooLarge(f"2*{name} = {2 * half} exceeds {MAX_WINDOW_CELLS} cells")
            if half > 0 and (2 * half) % self.w:
                raise ValueError(f"2*{name} = {2 * half} is not a multiple of w = {self.w}")
        if self.theta_range is not None:
            lo, hi = self.theta_range
            full_lo, full_hi = _axis_bounds(self.wtheta)
            if not full_lo <= lo < hi <= full_hi:
                raise ValueError(f"theta range {self.theta_range} outside [{full_lo}, {full_hi})")

    @classmethod
    def from_metric(
        cls,
        x: float,
        y: float,
        theta: float,
        resolution: float,
        delta_theta: float,
        w: int = 8,
    ) -> "SearchWindow":
        """Half-extents in metres/radians, rounded up so 2*wx and 2*wy are multiples of w."""
        step = w // math.gcd(2, w)

        def cells(extent: float) -> int:
            n = int(math.ceil(extent / resolution - 1e-9))
            return int(math.ceil(n / step)) * step if n > 0 else 0

        wtheta = int(math.ceil(theta / delta_theta - 1e-9)) if theta > 0 else 0
        return cls(cells(x), cells(y), wtheta, resolution, delta_theta, w)

    @property
    def x_bounds(self) -> Tuple[int, int]:
        return _axis_bounds(self.wx)

    @property
    def y_bounds(self) -> Tuple[int, int]:
        return _axis_bounds(self.wy)

    @property
    def theta_bounds(self) -> Tuple[int, int]:
        return self.theta_range if self.theta_range is not None else _axis_bounds(self.wtheta)

    @property
    def x_blocks(self) -> int:
        lo, hi = self.x_bounds
        return int(math.ceil((hi - lo) / self.w))

    @property
    def y_blocks(self) -> int:
        lo, hi = self.y_bounds
        return int(math.ceil((hi - lo) / self.w))

    def theta_steps(self) -> np.ndarray:
        lo, hi = self.theta_bounds
        return np.arange(lo, hi, dtype=np.int64)

    @property
    def num_candidates(self) -> int:
        (xl, xh), (yl, yh), (tl, th) = self.x_bounds, self.y_bounds, self.theta_bounds
        return (xh - xl) * (yh - yl) * (th - tl)

    def with_theta_range(self, lo: int, hi: int) -> "SearchWindow":
        return replace(self, theta_range=(lo, hi))


@dataclass
class MatchQuery:
    map: Optional[QuantizedMap]
    scan: Optional[Union[FixedScan, Scan]]
    xi0: Pose2D
    window: SearchWindow
    reuse_map: bool = False
    reuse_scan: bool = False


@dataclass(frozen=True)
class MatchResult:
    pose: Pose2D
    score: int
    best_steps: Tuple[int, int, int]
    num_score_evals: int
    coarse_evals: int = 0
    fine_evals: int = 0

    def normalized_score(self, num_points: int) -> float:
        return self.score / num_points if num_points else 0.0


@dataclass(frozen=True)
class DiscretizedScan:
    i: np.ndarray
    j: np.ndarray

    def __len__(self) -> int:
        return int(self.i.size)

    @property
    def indices(self) -> List[CellIndex]:
        return [CellIndex(int(a), int(b)) for a, b in zip(self.i, self.j)]


def _index_points(scan: FixedScan, xi: Pose2D, geometry, theta_fp: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cell indices for every (angle, point) pair, shape (T, N), in integer arithmetic."""
    ranges = scan.ranges
    sin_fp, cos_fp = sin_cos_fixed(scan.angles[None, :] + theta_fp[:, None])
    x_fp = ((ranges * cos_fp) >> FRAC_BITS) + int(to_fixed(xi.x)) - int(to_fixed(geometry.origin[0]))
    y_fp = ((ranges * sin_fp) >> FRAC_BITS) + int(to_fixed(xi.y)) - int(to_fixed(geometry.origin[1]))
    inv_res = reciprocal_fixed(geometry.resolution)
    return (x_fp * inv_res) >> (2 * FRAC_BITS), (y_fp * inv_res) >> (2 * FRAC_BITS)


def discretize(
    scan: Union[FixedScan, Scan],
    xi: Pose2D,
    geometry,
    n_theta: int = 0,
    delta_theta: float = 0.0,
) -> DiscretizedScan:
    """Project a scan into ``geometry``'s cells at heading xi.theta + n_theta * delta_theta."""
    fs = as_fixed_scan(scan)
    theta_fp = np.array([int(to_fixed(xi.theta)) + n_theta * int(to_fixed(delta_theta))], dtype=np.int64)
    i, j = _index_points(fs, xi, geometry, theta_fp)
    return DiscretizedScan(i[0], j[0])


def discretize_window(
    scan: Union[FixedScan, Scan],
    xi0: Pose2D,
    geometry,
    window: SearchWindow,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (theta_steps, i, j) with i and j of shape (T, N)."""
    fs = as_fixed_scan(scan)
    steps = window.theta_steps()
    theta_fp = int(to_fixed(xi0.theta)) + steps * int(to_fixed(window.delta_theta))
    i, j = _index_points(fs, xi0, geometry, theta_fp)
    return steps, i, j


def score_fine(qmap: QuantizedMap, idx: DiscretizedScan, nx: int, ny: int) -> int:
    ii = idx.i + nx
    jj = idx.j + ny
    valid = (ii >= 0) & (ii < qmap.width) & (jj >= 0) & (jj < qmap.height)
    return int(qmap.cells[jj[valid], ii[valid]].astype(np.int64).sum())


def score_coarse(coarse: CoarseMap, idx: DiscretizedScan, nx: int, ny: int) -> int:
    return int(coarse.values(idx.i + nx, idx.j + ny).sum())


def _fine_scores(
    padded: np.ndarray,
    i: np.ndarray,
    j: np.ndarray,
    ys: np.ndarray,
    xs: np.ndarray,
) -> np.ndarray:
    """Scores at every (ys, xs) offset for one heading; ``padded`` has a one-cell zero border."""
    height, width = padded.shape[0] - 2, padded.shape[1] - 2
    jj = np.clip(j[:, None, None] + ys[None, :, None], -1, height) + 1
    ii = np.clip(i[:, None, None] + xs[None, None, :], -1, width) + 1
    return padded[jj, ii].sum(axis=0, dtype=np.int64)


def _padded(qmap: QuantizedMap) -> np.ndarray:
    return np.pad(qmap.cells.astype(np.int64), 1)


def _result(
    xi0: Pose2D,
    window: SearchWindow,
    score: int,
    nx: int,
    ny: int,
    nt: int,
    coarse_evals: int,
    fine_evals: int,
) -> MatchResult:
    pose = Pose2D(
        xi0.x + window.resolution * nx,
        xi0.y + window.resolution * ny,
        xi0.theta + window.delta_theta * nt,
    )
    return MatchResult(
        pose=pose,
        score=int(score),
        best_steps=(int(nx), int(ny), int(nt)),
        num_score_evals=int(coarse_evals + fine_evals),
        coarse_evals=int(coarse_evals),
        fine_evals=int(fine_evals),
    )


def score_tensor(qmap: QuantizedMap, i: np.ndarray, j: np.ndarray, window: SearchWindow) -> np.ndarray:
    """Fine scores on the block-padded grid, shape (T, y_blocks*w, x_blocks*w).

    Offsets past the window's high end hold -1.
    """
    x_lo, x_hi = window.x_bounds
    y_lo, y_hi = window.y_bounds
    xs = x_lo + np.arange(window.x_blocks * window.w)
    ys = y_lo + np.arange(window.y_blocks * window.w)
    padded = _padded(qmap)
    out = np.empty((i.shape[0], ys.size, xs.size), dtype=np.int64)
    for t in range(i.shape[0]):
        out[t] = _fine_scores(padded, i[t], j[t], ys, xs)
    out[:, ys >= y_hi, :] = -1
    out[:, :, xs >= x_hi] = -1
    return out


def _oracle(qmap: QuantizedMap, coarse, scan: FixedScan, xi0: Pose2D, window: SearchWindow) -> MatchResult:
    if window.num_candidates > MAX_ORACLE_CANDIDATES:
        raise WindowTooLarge(f"{window.num_candidates} candidates exceed the oracle limit {MAX_ORACLE_CANDIDATES}")
    steps, i, j = discretize_window(scan, xi0, qmap, window)
    scores = score_tensor(qmap, i, j, window)
    w, nbx, nby = window.w, window.x_blocks, window.y_blocks
    ordered = scores.reshape(steps.size, nby, w, nbx, w).transpose(0, 1, 3, 2, 4).reshape(-1)
    flat = int(np.argmax(ordered))
    t, by, bx, ty, tx = np.unravel_index(flat, (steps.size, nby, nbx, w, w))
    nx = window.x_bounds[0] + bx * w + tx
    ny = window.y_bounds[0] + by * w + ty
    return _result(xi0, window, ordered[flat], nx, ny, steps[t], 0, window.num_candidates)


def _reference(qmap: QuantizedMap, coarse: CoarseMap, scan: FixedScan, xi0: Pose2D, window: SearchWindow) -> MatchResult:
    if len(scan) == 0:
        raise EmptyScan("cannot match an empty scan")
    steps, i, j = discretize_window(scan, xi0, qmap, window)
    w = window.w
    x_lo, x_hi = window.x_bounds
    y_lo, y_hi = window.y_bounds
    padded = _padded(qmap)
    block = np.arange(w)

    best, best_steps = -1, (0, 0, 0)
    coarse_evals = fine_evals = 0
    for t, nt in enumerate(steps):
        for by in range(window.y_blocks):
            ny0 = y_lo + by * w
            ys = ny0 + block
            for bx in range(window.x_blocks):
                nx0 = x_lo + bx * w
                bound = int(coarse.values(i[t] + nx0, j[t] + ny0).sum())
                coarse_evals += 1
                if bound <= best:
                    continue
                xs = nx0 + block
                scores = _fine_scores(padded, i[t], j[t], ys, xs)
                scores[ys >= y_hi, :] = -1
                scores[:, xs >= x_hi] = -1
                fine_evals += int(np.count_nonzero(ys < y_hi)) * int(np.count_nonzero(xs < x_hi))
                flat = int(np.argmax(scores))
                if scores.flat[flat] > best:
                    best = int(scores.flat[flat])
                    ty, tx = divmod(flat, w)
                    best_steps = (nx0 + tx, ny0 + ty, int(nt))
    return _result(xi0, window, best, *best_steps, coarse_evals, fine_evals)


def _optimized(qmap: QuantizedMap, coarse: CoarseMap, scan: FixedScan, xi0: Pose2D, window: SearchWindow) -> MatchResult:
    if window.w != UNROLL:
        raise ValueError(f"optimized matcher requires w = {UNROLL}, got {window.w}")
    if len(scan) == 0:
        raise EmptyScan("cannot match an empty scan")
    if coarse.layout != "rearranged":
        coarse = rearrange_coarse(coarse)
    steps, i, j = discretize_window(scan, xi0, qmap, window)
    x_lo, x_hi = window.x_bounds
    y_lo, y_hi = window.y_bounds
    score, nx, ny, nt, coarse_evals, fine_evals = match_unrolled(
        np.ascontiguousarray(qmap.cells),
        np.ascontiguousarray(coarse.cells),
        coarse.blocks_per_row,
        coarse.width,
        coarse.offset,
        np.ascontiguousarray(i),
        np.ascontiguousarray(j),
        steps,
        x_lo,
        x_hi,
        y_lo,
        y_hi,
        window.x_blocks,
        window.y_blocks,
        window.w,
    )
    return _result(xi0, window, score, nx, ny, nt, coarse_evals, fine_evals)


MATCHERS: Dict[str, Callable[..., MatchResult]] = {
    "optimized": _optimized,
    "reference": _reference,
    "oracle": _oracle,
}


class CsmEngine:
    """One matching core: caches a single map and a single scan.

    Not safe for concurrent use; give each thread its own engine.
    """

    def __init__(self, method: str = "optimized", name: str = "csm") -> None:
        if method not in MATCHERS:
            raise ValueError(f"Unknown matcher '{method}', expected one of {', '.join(METHODS)}")
        self.method = method
        self.name = name
        self._map: Optional[QuantizedMap] = None
        self._coarse: Optional[CoarseMap] = None
        self._scan: Optional[FixedScan] = None
        self.map_loads = 0
        self.scan_loads = 0
        self.coarse_builds = 0
        self.queries = 0

    @property
    def has_map(self) -> bool:
        return self._map is not None

    @property
    def has_scan(self) -> bool:
        return self._scan is not None

    def load_map(self, qmap: QuantizedMap, w: int = 8) -> None:
        self._map = qmap
        self.map_loads += 1
        self._coarse = None
        if self.method != "oracle":
            self._build_coarse(w)

    def load_scan(self, scan: Union[FixedScan, Scan]) -> None:
        self._scan = as_fixed_scan(scan)
        self.scan_loads += 1

    def _build_coarse(self, w: int) -> None:
        coarse = build_coarse(self._map, w)
        if self.method == "optimized":
            coarse = rearrange_coarse(coarse)
        self._coarse = coarse
        self.coarse_builds += 1

    def match(self, query: MatchQuery) -> MatchResult:
        if query.reuse_map:
            if self._map is None:
                raise ReuseWithoutLoad(f"{self.name}: reuse_map set but no map is loaded")
        else:
            if query.map is None:
                raise ValueError("query carries no map and reuse_map is not set")
            self.load_map(query.map, query.window.w)
        if query.reuse_scan:
            if self._scan is None:
                raise ReuseWithoutLoad(f"{self.name}: reuse_scan set but no scan is loaded")
        else:
            if query.scan is None:
                raise ValueError("query carries no scan and reuse_scan is not set")
            self.load_scan(query.scan)
        if self.method != "oracle" and (self._coarse is None or self._coarse.w != query.window.w):
            self._build_coarse(query.window.w)

        self.queries += 1
        result = MATCHERS[self.method](self._map, self._coarse, self._scan, query.xi0, query.window)
        logger.debug(
            "%s: score=%d steps=%s evals=%d", self.name, result.score, result.best_steps, result.num_score_evals
        )
        return result


def match_reference(query: MatchQuery) -> MatchResult:
    return CsmEngine("reference").match(query)


def match_optimized(query: MatchQuery) -> MatchResult:
    return CsmEngine("optimized").match(query)


def match_oracle(query: MatchQuery) -> MatchResult:
    return CsmEngine("oracle").match(query)


def match_scans_against_map(
    engine: CsmEngine,
    qmap: QuantizedMap,
    scans: Sequence[Union[FixedScan, Scan]],
    xi0s: Sequence[Pose2D],
    window: SearchWindow,
) -> List[MatchResult]:
    """Many scans against one map: the map is transferred once."""
    results = []
    for k, (scan, xi0) in enumerate(zip(scans, xi0s)):
        query = MatchQuery(map=None if k else qmap, scan=scan, xi0=xi0, window=window, reuse_map=k > 0)
        results.append(engine.match(query))
    return results


def match_scan_against_maps(
    engine: CsmEngine,
    qmaps: Sequence[QuantizedMap],
    scan: Union[FixedScan, Scan],
    xi0s: Sequence[Pose2D],
    window: SearchWindow,
) -> List[MatchResult]:
    """One scan against many maps: the scan is transferred once."""
    results = []
    for k, (qmap, xi0) in enumerate(zip(qmaps, xi0s)):
        query = MatchQuery(map=qmap, scan=None if k else scan, xi0=xi0, window=window, reuse_scan=k > 0)
        results.append(engine.match(query))
    return results
