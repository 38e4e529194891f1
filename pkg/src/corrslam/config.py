"""Run configuration: one TOML file, one dataclass per section.

Sections: ``[run]`` (seed, use_odometry), ``[laser]``, ``[preprocess]``,
``[map]``, ``[csm]`` (method and block size shared by every pipeline unless
a pipeline section sets its own), ``[pf]``, ``[graph]``, ``[graph.loop]``,
``[hector]`` and ``[eval]``.
"""
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ConfigError, reject_unknown_keys
from .geometry import PreprocessConfig
from .gridmap import OccupancyModel
from .metrics import DEFAULT_TOLERANCE
from .presets import DEFAULT_PRESET, PRESETS, LaserPreset, get_preset
from .slam_graph import GraphConfig, LoopConfig
from .slam_hector import HectorConfig
from .slam_pf import PfConfig

SECTIONS = ("run", "laser", "preprocess", "map", "csm", "pf", "graph", "hector", "eval")
SHARED_CSM_KEYS = ("method", "block")


@dataclass
class EvalConfig:
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalConfig":
        reject_unknown_keys("eval", data, [f.name for f in fields(cls)])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return {"tolerance": self.tolerance}


@dataclass
class RunConfig:
    seed: int = 0
    use_odometry: bool = True
    laser: LaserPreset = field(default_factory=lambda: PRESETS[DEFAULT_PRESET])
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: OccupancyModel = field(default_factory=OccupancyModel)
    pf: PfConfig = field(default_factory=PfConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    hector: HectorConfig = field(default_factory=HectorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        reject_unknown_keys("config", data, SECTIONS)
        try:
            run = dict(data.get("run", {}))
            reject_unknown_keys("run", run, ("seed", "use_odometry"))
            csm = dict(data.get("csm", {}))
            reject_unknown_keys("csm", csm, SHARED_CSM_KEYS)

            def with_csm(section: Dict[str, Any]) -> Dict[str, Any]:
                merged = {k: v for k, v in csm.items()}
                merged.update(section)
                return merged

            graph = with_csm(dict(data.get("graph", {})))
            if "loop" in graph:
                graph["loop"] = LoopConfig.from_dict(dict(graph["loop"]))
            return cls(
                seed=int(run.get("seed", 0)),
                use_odometry=bool(run.get("use_odometry", True)),
                laser=LaserPreset.from_dict(dict(data.get("laser", {}))),
                preprocess=PreprocessConfig.from_dict(dict(data.get("preprocess", {}))),
                model=OccupancyModel.from_dict(dict(data.get("map", {}))),
                pf=PfConfig.from_dict(with_csm(dict(data.get("pf", {})))),
                graph=GraphConfig.from_dict(graph),
                hector=HectorConfig.from_dict(with_csm(dict(data.get("hector", {})))),
                eval=EvalConfig.from_dict(dict(data.get("eval", {}))),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run": {"seed": self.seed, "use_odometry": self.use_odometry},
            "laser": _drop_none(self.laser.to_dict()),
            "preprocess": self.preprocess.to_dict(),
            "map": self.model.to_dict(),
            "pf": _drop_none(self.pf.to_dict()),
            "graph": _drop_none(self.graph.to_dict()),
            "hector": _drop_none(self.hector.to_dict()),
            "eval": self.eval.to_dict(),
        }

    def preprocess_config(self) -> PreprocessConfig:
        """Preprocessing gated by both the preprocess section and the laser's range limits."""
        return PreprocessConfig(
            r_min=max(self.preprocess.r_min, self.laser.r_min),
            r_max=min(self.preprocess.r_max, self.laser.r_max),
            max_points=self.preprocess.max_points,
        )

    def with_overrides(
        self,
        seed: Optional[int] = None,
        preset: Optional[str] = None,
        use_odometry: Optional[bool] = None,
    ) -> "RunConfig":
        if seed is not None:
            self.seed = seed
        if preset is not None:
            self.laser = get_preset(preset)
        if use_odometry is not None:
            self.use_odometry = use_odometry
        return self


def _drop_none(data: Dict[str, Any]) -> Dict[str, Any]:
    return {k: (_drop_none(v) if isinstance(v, dict) else v) for k, v in data.items() if v is not None}


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return RunConfig.from_dict(data)


def load_config(path: Optional[Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return repr(value)


def dump_config(config: RunConfig) -> str:
    """TOML text that ``parse_config`` reads back to an equal configuration."""
    lines = []
    for section, values in config.to_dict().items():
        nested = {k: v for k, v in values.items() if isinstance(v, dict)}
        lines.append(f"[{section}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in values.items() if not isinstance(v, dict)]
        lines.append("")
        for name, sub in nested.items():
            lines.append(f"[{section}.{name}]")
            lines += [f"{k} = {_toml_value(v)}" for k, v in sub.items()]
            lines.append("")
    return "\n".join(lines)
