"""Command-line entry point: ``corrslam <command> [options]``.

Commands: ``pf``, ``graph``, ``hector`` (run a pipeline over a Carmen log),
``match`` (answer one .csmq query), ``eval`` (score a trajectory against a
relations file), ``simulate`` (write a synthetic log) and ``bench`` (matcher
throughput).
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable, List, Optional

from rich.console import Console
from rich.table import Table

from . import __version__
from .bench import benchmark, results_agree, standard_query
from .config import RunConfig, dump_config, load_config
from .csm import METHODS, CsmEngine
from .invariants import failed
from .io import artifact_path, read_carmen, read_trajectory
from .logs import configure_logging
from .metrics import evaluate, parse_relations
from .packets import ResultRecord, read_query, read_result, write_result
from .pipeline import run_pipeline, write_artifacts, write_simulation
from .synthetic import SCENES, get_scene

logger = logging.getLogger("corrslam.cli")

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="Random seed (overrides [run] seed)")
    parser.add_argument("--out", type=Path, help="Output directory")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")


def _add_pipeline(parser: argparse.ArgumentParser) -> None:
    _add_common(parser)
    parser.add_argument("--log", type=Path, required=True, help="Carmen log with FLASER/ODOM lines")
    parser.add_argument("--relations", type=Path, help="Ground-truth relations for the error report")
    parser.add_argument("--preset", help="Laser preset name (overrides [laser])")
    parser.add_argument("--no-odometry", action="store_true", help="Use the identity motion prior")
    parser.add_argument("--no-png", action="store_true", help="Skip the PNG render")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrslam", description="2D LiDAR SLAM with correlative scan matching")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_pipeline(sub.add_parser("pf", help="Particle-filter SLAM"))
    graph = sub.add_parser("graph", help="Graph SLAM with submaps and loop closing")
    _add_pipeline(graph)
    graph.add_argument("--threaded", action="store_true", help="Run the backend on its own thread")
    hector = sub.add_parser("hector", help="Hector-style scan matching")
    _add_pipeline(hector)
    hector.add_argument("--robust", action="store_true", help="Seed Gauss-Newton with a correlative match")

    match = sub.add_parser("match", help="Answer a .csmq query")
    _add_common(match)
    match.add_argument("--query", type=Path, required=True)
    match.add_argument("--method", choices=METHODS, default="optimized")
    match.add_argument("--result", type=Path, help="Write the answer as a .csmr file")
    match.add_argument("--expect", type=Path, help="Golden .csmr file to compare against")

    ev = sub.add_parser("eval", help="Relation-based trajectory error")
    _add_common(ev)
    ev.add_argument("--trajectory", type=Path, required=True)
    ev.add_argument("--relations", type=Path, required=True)
    ev.add_argument("--tolerance", type=float, help="Timestamp matching tolerance in seconds")

    sim = sub.add_parser("simulate", help="Write a synthetic Carmen log with ground truth")
    _add_common(sim)
    sim.add_argument("--scene", choices=sorted(SCENES), default="loop_world")

    bench = sub.add_parser("bench", help="Matcher throughput on the standard query")
    _add_common(bench)
    bench.add_argument("--repeats", type=int, default=20)
    bench.add_argument("--method", action="append", choices=METHODS, help="Matcher to time (repeatable)")
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    return config.with_overrides(
        seed=args.seed,
        preset=getattr(args, "preset", None),
        use_odometry=False if getattr(args, "no_odometry", False) else None,
    )


def _print_report(console: Console, report) -> None:
    console.print(report.to_table())
    for line in report.to_lines():
        console.print(line, highlight=False)


def cmd_pipeline(args: argparse.Namespace, console: Console) -> int:
    config = _load(args)
    entries = read_carmen(args.log, config.laser)
    relations = parse_relations(args.relations.read_text(encoding="utf-8")) if args.relations else None
    kwargs = {}
    if args.command == "graph":
        kwargs["threaded"] = args.threaded
    if args.command == "hector":
        kwargs["robust"] = args.robust or config.hector.robust
    result = run_pipeline(args.command, entries, config, **kwargs)

    for check in failed(result.invariants()):
        logger.warning("invariant %s failed: %s", check["name"], check["detail"])

    out_dir = args.out or Path("run")
    paths, report = write_artifacts(result, out_dir, relations, config.eval.tolerance, png=not args.no_png)
    artifact_path(out_dir, "config.toml").write_text(dump_config(config), encoding="utf-8")
    for name, path in paths.items():
        logger.info("wrote %s: %s", name, path)

    summary = Table(title=f"{args.command} run")
    summary.add_column("key")
    summary.add_column("value", justify="right")
    for key, value in result.summary.items():
        summary.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(summary)
    if report is not None:
        _print_report(console, report)
    return EXIT_OK


def cmd_match(args: argparse.Namespace, console: Console) -> int:
    query = read_query(args.query)
    result = CsmEngine(args.method, name="cli").match(query)
    nx, ny, ntheta = result.best_steps
    record = ResultRecord(nx, ny, ntheta, result.score)
    console.print(record.line(), highlight=False)
    if args.result:
        write_result(args.result, result)
    if args.expect:
        golden = read_result(args.expect)
        if golden != record:
            logger.error("result %s differs from golden %s", record.line(), golden.line())
            return EXIT_MISMATCH
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, console: Console) -> int:
    config = _load(args)
    trajectory = read_trajectory(args.trajectory)
    relations = parse_relations(args.relations.read_text(encoding="utf-8"))
    tolerance = args.tolerance if args.tolerance is not None else config.eval.tolerance
    report = evaluate(trajectory, relations, tolerance)
    _print_report(console, report)
    if args.out:
        path = artifact_path(args.out, "report.txt")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(report.to_lines()) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, console: Console) -> int:
    world = get_scene(args.scene)
    if args.seed is not None:
        world = replace(world, seed=args.seed)
    out_dir = args.out or Path("data") / args.scene
    paths = write_simulation(world, out_dir, load_config(args.config))
    for name, path in paths.items():
        console.print(f"{name}: {path}", highlight=False)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, console: Console) -> int:
    query = standard_query(seed=args.seed or 0)
    methods = args.method or list(METHODS)
    table = benchmark(query, repeats=args.repeats, methods=methods)
    out = Table(title=f"Matcher throughput ({query.window.num_candidates} candidates, {args.repeats} runs)")
    for column in table.columns:
        out.add_column(column, justify="left" if column == "method" else "right")
    for row in table.itertuples(index=False):
        out.add_row(*(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row))
    console.print(out)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        table.to_csv(artifact_path(args.out, "bench.csv"), index=False)
    if not results_agree(table):
        logger.error("matchers disagree on the standard query")
        return EXIT_MISMATCH
    return EXIT_OK


COMMANDS = {
    "pf": cmd_pipeline,
    "graph": cmd_pipeline,
    "hector": cmd_pipeline,
    "match": cmd_match,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def main(argv: Optional[Iterable[str]] = None, console: Optional[Console] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    configure_logging(level)
    console = console or Console()
    try:
        return COMMANDS[args.command](args, console)
    except (ValueError, RuntimeError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


def run(argv: Optional[List[str]] = None) -> None:
    raise SystemExit(main(argv))
