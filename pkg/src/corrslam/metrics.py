"""Relation-based trajectory error and run-time breakdowns.

For every relation (t_i, t_j, Δ*) the estimated relative motion
Δ = ξ(t_j) ⊖ ξ(t_i) is compared with Δ*; the residual Δ ⊖ Δ* contributes its
translation norm and its wrapped absolute heading. Means of the plain and the
squared values are reported, so the metric only sees relative poses.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.table import Table

from .errors import NoResolvableRelations, RelationsParseError
from .geometry import Pose2D, relative

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.1
RESIDUAL_COLUMNS = ["t_i", "t_j", "dx", "dy", "dtheta", "trans", "rot"]
TimedPose = Tuple[float, Pose2D]


@dataclass(frozen=True)
class Relation:
    t_i: float
    t_j: float
    delta_gt: Pose2D

    def __post_init__(self) -> None:
        if not self.t_i < self.t_j:
            raise ValueError(f"relation needs t_i < t_j, got {self.t_i} and {self.t_j}")


@dataclass
class ErrorReport:
    eps_trans: float
    eps_rot: float
    eps_trans_sq: float
    eps_rot_sq: float
    std_trans: float
    std_rot: float
    count: int
    skipped: int
    residuals: pd.DataFrame

    def as_dict(self) -> Dict[str, float]:
        return {
            "eps_trans": self.eps_trans,
            "eps_trans_std": self.std_trans,
            "eps_rot": self.eps_rot,
            "eps_rot_std": self.std_rot,
            "eps_trans_sq": self.eps_trans_sq,
            "eps_rot_sq": self.eps_rot_sq,
            "count": self.count,
            "skipped": self.skipped,
        }

    def to_lines(self) -> List[str]:
        """Machine-readable ``key=value`` lines."""
        lines = []
        for key, value in self.as_dict().items():
            lines.append(f"{key}={value}" if isinstance(value, int) else f"{key}={value:.9f}")
        return lines

    def to_table(self, title: str = "Trajectory error") -> Table:
        table = Table(title=title)
        table.add_column("metric")
        table.add_column("n = 1", justify="right")
        table.add_column("n = 2", justify="right")
        table.add_row("translation [m]", f"{self.eps_trans:.4f} ± {self.std_trans:.4f}", f"{self.eps_trans_sq:.6f}")
        table.add_row(
            "rotation [deg]",
            f"{math.degrees(self.eps_rot):.4f} ± {math.degrees(self.std_rot):.4f}",
            f"{self.eps_rot_sq * (180.0 / math.pi) ** 2:.6f}",
        )
        table.add_row("relations", str(self.count), f"{self.skipped} skipped")
        return table


def _nearest(times: np.ndarray, order: np.ndarray, t: float, tolerance: float) -> Optional[int]:
    sorted_times = times[order]
    k = int(np.searchsorted(sorted_times, t))
    best = None
    best_gap = math.inf
    for c in (k - 1, k):
        if 0 <= c < sorted_times.size:
            gap = abs(sorted_times[c] - t)
            if gap < best_gap:
                best, best_gap = c, gap
    if best is None or best_gap > tolerance:
        return None
    return int(order[best])


def residual(estimated: Pose2D, ground_truth: Pose2D) -> Pose2D:
    return relative(estimated, ground_truth)


def evaluate(
    trajectory: Sequence[TimedPose],
    relations: Sequence[Relation],
    tolerance: float = DEFAULT_TOLERANCE,
) -> ErrorReport:
    """Mean translational and rotational residuals over resolvable relations."""
    times = np.array([t for t, _ in trajectory], dtype=np.float64)
    poses = [p for _, p in trajectory]
    order = np.argsort(times, kind="stable")

    rows = []
    skipped = 0
    for rel in relations:
        i = _nearest(times, order, rel.t_i, tolerance)
        j = _nearest(times, order, rel.t_j, tolerance)
        if i is None or j is None:
            skipped += 1
            continue
        r = residual(relative(poses[j], poses[i]), rel.delta_gt)
        rows.append(
            {
                "t_i": rel.t_i,
                "t_j": rel.t_j,
                "dx": r.x,
                "dy": r.y,
                "dtheta": r.theta,
                "trans": math.hypot(r.x, r.y),
                "rot": abs(r.theta),
            }
        )
    if not rows:
        raise NoResolvableRelations(
            f"none of {len(relations)} relation(s) matched the trajectory within {tolerance} s"
        )
    if skipped:
        logger.warning("%d of %d relations could not be matched to the trajectory", skipped, len(relations))

    residuals = pd.DataFrame(rows, columns=RESIDUAL_COLUMNS)
    trans = residuals["trans"].to_numpy()
    rot = residuals["rot"].to_numpy()
    return ErrorReport(
        eps_trans=float(trans.mean()),
        eps_rot=float(rot.mean()),
        eps_trans_sq=float(np.mean(trans**2)),
        eps_rot_sq=float(np.mean(rot**2)),
        std_trans=float(trans.std(ddof=0)),
        std_rot=float(rot.std(ddof=0)),
        count=len(rows),
        skipped=skipped,
        residuals=residuals,
    )


def _relation_from_fields(values: List[float]) -> Relation:
    if len(values) == 5:
        t_i, t_j, dx, dy, dtheta = values
    elif len(values) == 8:
        # t_i t_j x y z roll pitch yaw; planar use keeps x, y and yaw
        t_i, t_j, dx, dy, _, _, _, dtheta = values
    else:
        raise ValueError(f"expected 5 or 8 columns, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite value")
    return Relation(t_i, t_j, Pose2D(dx, dy, dtheta))


def parse_relations_with_diagnostics(text: str) -> Tuple[List[Relation], List[str]]:
    relations: List[Relation] = []
    diagnostics: List[str] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            relations.append(_relation_from_fields([float(tok) for tok in line.split()]))
        except ValueError as exc:
            diagnostics.append(f"line {number}: {exc}")
    return relations, diagnostics


def parse_relations(text: str) -> List[Relation]:
    """Parse ``t_i t_j dx dy dtheta`` (or 8-column ``... x y z roll pitch yaw``) lines.

    Malformed lines are logged and skipped; the call fails only when no line
    parsed and at least one was malformed.
    """
    relations, diagnostics = parse_relations_with_diagnostics(text)
    for message in diagnostics:
        logger.warning("relations %s", message)
    if diagnostics and not relations:
        raise RelationsParseError(f"no valid relations ({len(diagnostics)} malformed line(s)); first: {diagnostics[0]}")
    return relations


def serialize_relations(relations: Iterable[Relation]) -> str:
    lines = [
        f"{r.t_i:.17g} {r.t_j:.17g} {r.delta_gt.x:.17g} {r.delta_gt.y:.17g} {r.delta_gt.theta:.17g}"
        for r in relations
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def relations_from_trajectory(trajectory: Sequence[TimedPose], spacing: int = 1, max_gap: int = 1) -> List[Relation]:
    """Relations between poses ``gap`` steps apart, for every ``spacing``-th start."""
    if spacing < 1 or max_gap < 1:
        raise ValueError("spacing and max_gap must be >= 1")
    out = []
    for a in range(0, len(trajectory), spacing):
        for gap in range(1, max_gap + 1):
            b = a + gap
            if b >= len(trajectory):
                break
            (t_a, p_a), (t_b, p_b) = trajectory[a], trajectory[b]
            if t_a < t_b:
                out.append(Relation(t_a, t_b, relative(p_b, p_a)))
    return out


def timing_breakdown(records: Iterable[Mapping]) -> pd.DataFrame:
    """Total seconds and share per phase over run-log records."""
    totals: Dict[str, float] = {}
    for record in records:
        for phase, seconds in (record.get("phase_seconds") or {}).items():
            totals[phase] = totals.get(phase, 0.0) + float(seconds)
    grand = sum(totals.values())
    rows = [
        {"phase": phase, "seconds": seconds, "share": seconds / grand if grand > 0 else 0.0}
        for phase, seconds in totals.items()
    ]
    df = pd.DataFrame(rows, columns=["phase", "seconds", "share"])
    return df.sort_values(by="seconds", ascending=False, kind="stable").reset_index(drop=True)


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0, 0.0
    return float(arr.mean()), float(arr.std(ddof=0))
