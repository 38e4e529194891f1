"""Run one SLAM pipeline over a parsed log and write its artifacts.

A run turns laser entries into preprocessed scans and odometry deltas, feeds
them to the particle filter, the graph pipeline or the Hector matcher, and
collects one run-log record per step. ``write_artifacts`` puts the
trajectory, map, run log, error report and (for the graph pipeline) the g2o
graph into one output directory.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig, dump_config
from .errors import EmptyScan
from .geometry import Pose2D, Scan, compose, preprocess_scan
from .gridmap import GridMap, map_metadata, map_to_gray, write_pgm
from .invariants import run_invariants
from .io import LogEntry, artifact_path, laser_entries, odometry_deltas, write_carmen, write_runlog, write_trajectory
from .metrics import ErrorReport, Relation, evaluate, serialize_relations
from .plots import export_png, map_figure
from .posegraph import PoseGraph
from .slam_graph import GraphSlamState, global_map, init_graph_slam, run_sequential, run_threaded
from .slam_hector import hector_step, init_hector
from .slam_pf import best_particle, init_pf, pf_step
from .synthetic import SyntheticWorld, simulate

logger = logging.getLogger(__name__)

TimedPose = Tuple[float, Pose2D]
PIPELINES = ("pf", "graph", "hector")


@dataclass
class PipelineResult:
    pipeline: str
    trajectory: List[TimedPose]
    map: GridMap
    records: List[Dict[str, Any]]
    summary: Dict[str, Any] = field(default_factory=dict)
    graph: Optional[PoseGraph] = None
    weights: Optional[np.ndarray] = None
    chi2_histories: List[List[float]] = field(default_factory=list)

    @property
    def poses(self) -> List[Pose2D]:
        return [p for _, p in self.trajectory]

    def invariants(self) -> List[Dict[str, object]]:
        return run_invariants(
            self.trajectory,
            expected_length=self.summary.get("scans"),
            weights=None if self.weights is None else self.weights.tolist(),
            chi2_histories=self.chi2_histories or None,
        )


def prepare_scans(entries: Sequence[LogEntry], config: RunConfig) -> Tuple[List[Scan], List[Pose2D]]:
    """Preprocessed scans and the motion prior leading to each one.

    Scans left empty by preprocessing are dropped; their odometry is folded
    into the next kept scan's delta.
    """
    lasers = laser_entries(entries)
    deltas = odometry_deltas(lasers, config.use_odometry)
    preprocess = config.preprocess_config()
    scans: List[Scan] = []
    kept: List[Pose2D] = []
    carried = Pose2D()
    for entry, delta in zip(lasers, deltas):
        carried = compose(carried, delta)
        scan = preprocess_scan(entry.scan, preprocess)
        if len(scan) == 0:
            logger.warning("scan at t=%.3f has no readings after preprocessing, skipped", entry.timestamp)
            continue
        scans.append(scan)
        kept.append(carried if kept else Pose2D())
        carried = Pose2D()
    if not scans:
        raise EmptyScan("no scan has readings inside the configured range limits")
    return scans, kept


def _record(step: int, t: float, phase_seconds: Dict[str, float], score: float, evals: int, **extra: Any) -> Dict[str, Any]:
    record = {"step": step, "t": t, "phase_seconds": dict(phase_seconds), "score": score, "num_score_evals": evals}
    record.update(extra)
    return record


def run_pf(entries: Sequence[LogEntry], config: RunConfig, progress: Optional[Callable[[int], None]] = None) -> PipelineResult:
    scans, deltas = prepare_scans(entries, config)
    state = init_pf(config.pf, scans[0], seed=config.seed, model=config.model)
    records = [_record(0, scans[0].timestamp, {}, 0, 0)]
    for step, (scan, delta) in enumerate(zip(scans[1:], deltas[1:]), start=1):
        pf_step(state, scan, delta)
        stats = state.last_stats
        records.append(
            _record(
                step,
                scan.timestamp,
                stats.phase_seconds,
                stats.best_score,
                stats.num_score_evals,
                n_eff=stats.n_eff,
                resampled=stats.resampled,
                all_zero=stats.all_zero,
            )
        )
        if progress is not None:
            progress(step)
    trajectory, grid = best_particle(state)
    summary = {
        "pipeline": "pf",
        "scans": len(scans),
        "particles": len(state.particles),
        "resamples": state.resamples,
        "all_zero_steps": sum(1 for r in records if r.get("all_zero")),
    }
    logger.info("pf: %d scans, %d particles, %d resamples", len(scans), len(state.particles), state.resamples)
    return PipelineResult(
        pipeline="pf",
        trajectory=list(zip(state.timestamps, trajectory)),
        map=grid,
        records=records,
        summary=summary,
        weights=state.weights,
    )


def run_graph(
    entries: Sequence[LogEntry],
    config: RunConfig,
    threaded: bool = False,
    progress: Optional[Callable[[int], None]] = None,
) -> PipelineResult:
    scans, deltas = prepare_scans(entries, config)
    state = init_graph_slam(config.graph, config.model)
    records: List[Dict[str, Any]] = []
    seen_backend = [None]

    def on_step(s: GraphSlamState) -> None:
        stats = s.last_stats
        phases = dict(stats.phase_seconds)
        loops = candidates = 0
        backend = s.last_backend
        if backend is not None and backend is not seen_backend[0]:
            seen_backend[0] = backend
            for name, seconds in backend.phase_seconds.items():
                phases[name] = phases.get(name, 0.0) + seconds
            loops, candidates = len(backend.loops), backend.candidates
        records.append(
            _record(
                stats.node,
                s.timestamps[-1],
                phases,
                stats.score,
                stats.num_score_evals,
                degenerate=stats.degenerate,
                loops=loops,
                loop_candidates=candidates,
            )
        )
        if progress is not None:
            progress(stats.node)

    runner = run_threaded if threaded else run_sequential
    runner(state, scans, deltas, on_step)

    final = state.last_backend
    if final is not None and final is not seen_backend[0] and records:
        last = records[-1]
        for name, seconds in final.phase_seconds.items():
            last["phase_seconds"][name] = last["phase_seconds"].get(name, 0.0) + seconds
        last["loops"] += len(final.loops)
        last["loop_candidates"] += final.candidates

    chi2 = state.graph.chi2()
    summary = {
        "pipeline": "graph",
        "threaded": threaded,
        "scans": len(scans),
        "submaps": len(state.submaps),
        "loop_candidates": state.loop_candidates,
        "loops_accepted": state.loops_accepted,
        "optimizations": state.optimizations,
        "degenerate_nodes": len(state.degenerate_nodes),
        "chi2": chi2,
    }
    logger.info(
        "graph: %d scans, %d submaps, %d/%d loops accepted, %d optimizations, chi2 %.4g",
        len(scans),
        len(state.submaps),
        state.loops_accepted,
        state.loop_candidates,
        state.optimizations,
        chi2,
    )
    return PipelineResult(
        pipeline="graph",
        trajectory=list(zip(state.timestamps, state.trajectory)),
        map=global_map(state),
        records=records,
        summary=summary,
        graph=state.graph,
        chi2_histories=[list(h) for h in state.chi2_log],
    )


def run_hector(
    entries: Sequence[LogEntry],
    config: RunConfig,
    robust: Optional[bool] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> PipelineResult:
    """Hector matching seeds each scan from the previous pose; odometry is not used."""
    hector_config = config.hector if robust is None else replace(config.hector, robust=robust)
    scans, _ = prepare_scans(entries, config)
    state = init_hector(hector_config, scans[0], model=config.model)
    records = [_record(0, scans[0].timestamp, {}, 0, 0)]
    for step, scan in enumerate(scans[1:], start=1):
        hector_step(state, scan)
        stats = state.last_stats
        records.append(
            _record(
                step,
                scan.timestamp,
                stats.phase_seconds,
                stats.csm_score,
                stats.num_score_evals,
                cost_seed=stats.cost_seed,
                cost_final=stats.cost_final,
                iterations=stats.iterations,
            )
        )
        if progress is not None:
            progress(step)
    summary = {"pipeline": "hector", "robust": hector_config.robust, "scans": len(scans), "levels": len(state.pyramid)}
    logger.info("hector%s: %d scans", " (robust)" if hector_config.robust else "", len(scans))
    return PipelineResult(
        pipeline="hector",
        trajectory=list(zip(state.timestamps, state.trajectory)),
        map=state.pyramid.finest,
        records=records,
        summary=summary,
    )


def run_pipeline(name: str, entries: Sequence[LogEntry], config: RunConfig, **kwargs: Any) -> PipelineResult:
    if name == "pf":
        return run_pf(entries, config, **kwargs)
    if name == "graph":
        return run_graph(entries, config, **kwargs)
    if name == "hector":
        return run_hector(entries, config, **kwargs)
    raise ValueError(f"Unknown pipeline '{name}', expected one of {', '.join(PIPELINES)}")


def write_artifacts(
    result: PipelineResult,
    out_dir: Path,
    relations: Optional[Sequence[Relation]] = None,
    tolerance: Optional[float] = None,
    png: bool = True,
) -> Tuple[Dict[str, Path], Optional[ErrorReport]]:
    """Write run outputs into ``out_dir``; returns the paths and the error report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    paths["trajectory"] = write_trajectory(artifact_path(out_dir, "trajectory.txt"), result.trajectory)
    paths["map"] = write_pgm(artifact_path(out_dir, "map.pgm"), map_to_gray(result.map))
    paths["map_meta"] = artifact_path(out_dir, "map.json")
    paths["map_meta"].write_text(json.dumps(map_metadata(result.map), sort_keys=True) + "\n", encoding="utf-8")
    paths["runlog"] = write_runlog(artifact_path(out_dir, "runlog.jsonl"), result.records)
    if result.graph is not None:
        paths["graph"] = result.graph.write_g2o(artifact_path(out_dir, "graph.g2o"))

    report = None
    if relations is not None:
        kwargs = {} if tolerance is None else {"tolerance": tolerance}
        report = evaluate(result.trajectory, relations, **kwargs)
        report_path = artifact_path(out_dir, "report.txt")
        report_path.write_text("\n".join(report.to_lines()) + "\n", encoding="utf-8")
        paths["report"] = report_path
        report.residuals.to_csv(artifact_path(out_dir, "residuals.csv"), index=False)
        paths["residuals"] = artifact_path(out_dir, "residuals.csv")

    if png:
        written = export_png(map_figure(result.map, result.poses), artifact_path(out_dir, "map.png"))
        if written is not None:
            paths["png"] = written
    return paths, report


def write_simulation(world: SyntheticWorld, out_dir: Path, config: Optional[RunConfig] = None) -> Dict[str, Path]:
    """Simulate ``world`` and write its log, relations, ground truth and a matching config."""
    sim = simulate(world)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "log": write_carmen(artifact_path(out_dir, f"{world.name}.log"), sim.entries),
        "ground_truth": write_trajectory(artifact_path(out_dir, f"{world.name}.gt.txt"), sim.ground_truth),
        "relations": artifact_path(out_dir, f"{world.name}.relations"),
        "config": artifact_path(out_dir, "config.toml"),
    }
    paths["relations"].write_text(serialize_relations(sim.relations), encoding="utf-8")
    config = replace(config or RunConfig(), seed=world.seed, laser=world.lidar.preset())
    paths["config"].write_text(dump_config(config), encoding="utf-8")
    logger.info("%s: %d scans, %d relations written to %s", world.name, len(sim.entries), len(sim.relations), out_dir)
    return paths
