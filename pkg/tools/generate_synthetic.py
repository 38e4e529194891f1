#!/usr/bin/env python3
"""Generate a synthetic Carmen log with ground truth for demos and tests.

Usage:
    python tools/generate_synthetic.py --scene loop_world --output data/loop_world --seed 7

Writes ``<scene>.log`` (FLASER lines with drifting odometry), ``<scene>.relations``
(ground-truth relative motions), ``<scene>.gt.txt`` (the scripted trajectory)
and a ``config.toml`` whose ``[laser]`` section reads the log back.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterable, Optional

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from corrslam.pipeline import write_simulation  # noqa: E402
from corrslam.synthetic import SCENES, get_scene  # noqa: E402


def generate_synthetic_dataset(
    scene: str,
    output_dir: Path,
    seed: Optional[int] = None,
    relation_spacing: Optional[int] = None,
) -> Dict[str, Path]:
    world = get_scene(scene)
    if seed is not None:
        world = replace(world, seed=seed)
    if relation_spacing is not None:
        world = replace(world, relation_spacing=relation_spacing)
    return write_simulation(world, output_dir)


def main(argv: Iterable[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="Generate a synthetic LiDAR log with ground truth")
    parser.add_argument("--scene", choices=sorted(SCENES), default="loop_world", help="Scene to simulate")
    parser.add_argument("--output", type=Path, default=Path("data/synthetic"), help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Noise seed (scene default when omitted)")
    parser.add_argument("--relation-spacing", type=int, default=None, help="Scans between relation starts")
    args = parser.parse_args(list(argv) if argv is not None else None)

    paths = generate_synthetic_dataset(args.scene, args.output, seed=args.seed, relation_spacing=args.relation_spacing)
    print(f"Synthetic {args.scene} written to {paths['log'].parent}")


if __name__ == "__main__":
    main()
