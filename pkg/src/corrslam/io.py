"""Dataset and artifact files: Carmen logs, trajectories, run logs."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CarmenParseError
from .geometry import Pose2D, Scan, relative
from .presets import DEFAULT_PRESET, PRESETS, LaserPreset

logger = logging.getLogger(__name__)

LASER = "laser"
ODOMETRY = "odometry"
SAFE_FILENAME_RE = re.compile(r"[^A-Za-z0-9._-]+")
TimedPose = Tuple[float, Pose2D]


@dataclass(frozen=True, eq=False)
class LogEntry:
    kind: str
    odom_pose: Pose2D
    timestamp: float
    scan: Optional[Scan] = None
    laser_pose: Optional[Pose2D] = None
    host: str = "corrslam"

    @property
    def is_laser(self) -> bool:
        return self.kind == LASER


def _read_text(stream: IO) -> str:
    data = stream.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _floats(tokens: Sequence[str], what: str) -> List[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ValueError(f"non-numeric {what}") from None
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite {what}")
    return values


def _parse_flaser(tokens: List[str], preset: LaserPreset) -> LogEntry:
    try:
        count = int(tokens[1])
    except (IndexError, ValueError):
        raise ValueError("missing reading count") from None
    if count < 0:
        raise ValueError(f"negative reading count {count}")
    if len(tokens) < count + 9:
        raise ValueError(f"declares {count} readings but has {max(0, len(tokens) - 9)} values before the poses")
    ranges = _floats(tokens[2 : 2 + count], "range")
    if any(r < 0 for r in ranges):
        raise ValueError("negative range")
    x, y, theta, ox, oy, otheta, ts = _floats(tokens[2 + count : 9 + count], "pose or timestamp")
    host = tokens[9 + count] if len(tokens) > 9 + count else "corrslam"
    scan = Scan(np.array(ranges), preset.angles(count), ts)
    return LogEntry(LASER, Pose2D(ox, oy, otheta), ts, scan, Pose2D(x, y, theta), host)


def _parse_odom(tokens: List[str]) -> LogEntry:
    if len(tokens) < 8:
        raise ValueError(f"ODOM needs at least 7 values, got {len(tokens) - 1}")
    x, y, theta, _, _, _, ts = _floats(tokens[1:8], "odometry value")
    host = tokens[8] if len(tokens) > 8 else "corrslam"
    return LogEntry(ODOMETRY, Pose2D(x, y, theta), ts, host=host)


def parse_carmen_with_diagnostics(
    text: str,
    preset: Optional[LaserPreset] = None,
) -> Tuple[List[LogEntry], List[str]]:
    preset = preset or PRESETS[DEFAULT_PRESET]
    entries: List[LogEntry] = []
    diagnostics: List[str] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        try:
            if tokens[0] == "FLASER":
                entries.append(_parse_flaser(tokens, preset))
            elif tokens[0] == "ODOM":
                entries.append(_parse_odom(tokens))
        except ValueError as exc:
            diagnostics.append(f"line {number}: {tokens[0]} {exc}")
    return entries, diagnostics


def parse_carmen(stream: Union[IO[str], str], preset: Optional[LaserPreset] = None) -> List[LogEntry]:
    """Parse FLASER and ODOM lines from an open stream or the log text.

    Other message types are skipped. Malformed lines are logged with their
    line numbers and skipped; a log without any laser entry is an error.
    """
    content = stream if isinstance(stream, str) else _read_text(stream)
    entries, diagnostics = parse_carmen_with_diagnostics(content, preset)
    for message in diagnostics:
        logger.warning("carmen %s", message)
    if not any(e.is_laser for e in entries):
        detail = f"; first problem: {diagnostics[0]}" if diagnostics else ""
        raise CarmenParseError(f"log has no valid laser entries{detail}")
    return entries


def read_carmen(path: Path, preset: Optional[LaserPreset] = None) -> List[LogEntry]:
    return parse_carmen(Path(path).read_text(encoding="utf-8"), preset)


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def serialize_entry(entry: LogEntry) -> str:
    if entry.is_laser:
        scan = entry.scan
        laser = entry.laser_pose or entry.odom_pose
        fields = ["FLASER", str(len(scan))]
        fields += [_fmt(r) for r in scan.ranges]
        fields += [_fmt(v) for v in (*laser, *entry.odom_pose, entry.timestamp)]
        fields += [entry.host, _fmt(entry.timestamp)]
        return " ".join(fields)
    fields = ["ODOM"] + [_fmt(v) for v in (*entry.odom_pose, 0.0, 0.0, 0.0, entry.timestamp)]
    fields += [entry.host, _fmt(entry.timestamp)]
    return " ".join(fields)


def serialize_carmen(entries: Iterable[LogEntry]) -> str:
    lines = [serialize_entry(e) for e in entries]
    return "\n".join(lines) + ("\n" if lines else "")


def write_carmen(path: Path, entries: Iterable[LogEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_carmen(entries), encoding="utf-8")
    return path


def laser_entries(entries: Iterable[LogEntry]) -> List[LogEntry]:
    return [e for e in entries if e.is_laser]


def odometry_deltas(entries: Sequence[LogEntry], use_odometry: bool = True) -> List[Pose2D]:
    """Motion between consecutive laser entries in the robot frame.

    Entry k gets the delta from entry k-1; the first entry gets identity.
    Without odometry every delta is the identity.
    """
    lasers = laser_entries(entries)
    deltas = [Pose2D()]
    for prev, cur in zip(lasers, lasers[1:]):
        deltas.append(relative(cur.odom_pose, prev.odom_pose) if use_odometry else Pose2D())
    return deltas[: len(lasers)]


def format_trajectory(trajectory: Iterable[TimedPose]) -> str:
    lines = [f"{t:.6f} {p.x:.9f} {p.y:.9f} {p.theta:.9f}" for t, p in trajectory]
    return "\n".join(lines) + ("\n" if lines else "")


def write_trajectory(path: Path, trajectory: Iterable[TimedPose]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_trajectory(trajectory), encoding="utf-8")
    return path


def parse_trajectory(text: str) -> List[TimedPose]:
    out: List[TimedPose] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 4:
            raise ValueError(f"trajectory line {number}: expected 't x y theta', got {len(tokens)} values")
        try:
            t, x, y, theta = (float(v) for v in tokens)
        except ValueError:
            raise ValueError(f"trajectory line {number}: non-numeric value") from None
        out.append((t, Pose2D(x, y, theta)))
    return out


def read_trajectory(path: Path) -> List[TimedPose]:
    return parse_trajectory(Path(path).read_text(encoding="utf-8"))


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Pose2D):
        return [value.x, value.y, value.theta]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_runlog(path: Path, records: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(dict(r), sort_keys=True, default=_jsonable) for r in records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def read_runlog(path: Path) -> List[Dict[str, Any]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def sanitize_filename(name: str) -> str:
    """Filesystem-safe file name; rejects traversal, never returns empty."""
    parts = [p for p in str(name or "").strip().replace("\\", "/").split("/") if p not in ("", ".")]
    if any(p == ".." for p in parts):
        raise ValueError(f"path traversal not allowed in '{name}'")
    cleaned = SAFE_FILENAME_RE.sub("_", "_".join(parts))
    while ".." in cleaned:
        cleaned = cleaned.replace("..", ".")
    return cleaned.lstrip(".") or "artifact"


def artifact_path(out_dir: Path, filename: str) -> Path:
    """Path for ``filename`` inside ``out_dir``; never escapes it."""
    base = Path(out_dir).resolve()
    path = (base / sanitize_filename(filename)).resolve()
    if not path.is_relative_to(base):
        raise ValueError(f"artifact path escapes {base}")
    return path
