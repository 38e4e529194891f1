"""Load a run directory written by ``corrslam pf|graph|hector --out``."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from corrslam.geometry import Pose2D
from corrslam.gridmap import GridMap, decode_pgm, grid_from_gray
from corrslam.io import read_runlog, read_trajectory
from corrslam.metrics import timing_breakdown

REQUIRED_FILES = ["trajectory.txt", "map.pgm"]


@dataclass
class RunArtifacts:
    path: Path
    trajectory: List[Tuple[float, Pose2D]]
    map: GridMap
    records: List[Dict] = field(default_factory=list)
    report: Dict[str, str] = field(default_factory=dict)
    residuals: Optional[pd.DataFrame] = None

    @property
    def timings(self) -> pd.DataFrame:
        return timing_breakdown(self.records)

    @property
    def scores(self) -> pd.DataFrame:
        rows = [{"step": r["step"], "score": r.get("score", 0)} for r in self.records]
        return pd.DataFrame(rows, columns=["step", "score"])


def list_runs(root: Path) -> List[Path]:
    """Directories under ``root`` (itself included) that hold a complete run."""
    root = Path(root)
    if not root.is_dir():
        return []
    candidates = [root] + sorted(p for p in root.iterdir() if p.is_dir())
    return [p for p in candidates if all((p / name).is_file() for name in REQUIRED_FILES)]


def validate_run(path: Path) -> List[str]:
    errors = []
    for name in REQUIRED_FILES:
        if not (Path(path) / name).is_file():
            errors.append(f"Missing {name}")
    return errors


def _report(path: Path) -> Dict[str, str]:
    if not path.is_file():
        return {}
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key.strip()] = value.strip()
    return out


def load_run(path: Path) -> RunArtifacts:
    path = Path(path)
    errors = validate_run(path)
    if errors:
        raise ValueError(f"{path} is not a run directory: {'; '.join(errors)}")
    meta = {}
    if (path / "map.json").is_file():
        meta = json.loads((path / "map.json").read_text(encoding="utf-8"))
    gray = decode_pgm((path / "map.pgm").read_bytes())
    grid = grid_from_gray(gray, meta.get("resolution", 0.05), tuple(meta.get("origin", (0.0, 0.0))))
    records = read_runlog(path / "runlog.jsonl") if (path / "runlog.jsonl").is_file() else []
    residuals = pd.read_csv(path / "residuals.csv") if (path / "residuals.csv").is_file() else None
    return RunArtifacts(
        path=path,
        trajectory=read_trajectory(path / "trajectory.txt"),
        map=grid,
        records=records,
        report=_report(path / "report.txt"),
        residuals=residuals,
    )
