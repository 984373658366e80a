"""TOML experiment configuration.

Lengths in the file are millimetres and fields are microtesla; everything is
converted to SI on load. See ``presets/*.toml`` for complete examples.

Sections::

    [experiment]  kind, name, trials, seed, plus kind-specific keys
                  (family / sizes, axis / offsets_mm)
    [array]       family + size, or file; optional pitch_mm
    [magnet]      length_mm, radius_mm, magnetization, mu_r
    [sensor]      noise_sigma_uT (scalar or [x, y, z]), quantize,
                  resolution_uT, full_scale_uT
    [filter]      enabled, window, cycles, warmup
    [solver]      any SolverConfig field
    [[poses]]     label, position_mm, orientation (omit or "random")
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .field_model import MagnetSpec
from .harness import LabeledPose, Scenario
from .localization import SolverConfig
from .measurement import UT, SensorModel
from .sensor_array import load_array, paper_layouts

MM = 1e-3
KINDS = ("scenario", "sensor_count", "geometry", "positions", "filter_compare")
PRESETS = ("filter_compare", "sensor_count", "vertical_height", "horizontal_distance", "positions")

_KNOWN = {
    "experiment": {"kind", "name", "trials", "seed", "family", "sizes", "axis", "offsets_mm"},
    "array": {"family", "size", "file", "pitch_mm", "permissive"},
    "magnet": {"length_mm", "radius_mm", "magnetization", "mu_r"},
    "sensor": {"noise_sigma_uT", "quantize", "resolution_uT", "full_scale_uT"},
    "filter": {"enabled", "window", "cycles", "warmup"},
    "solver": {f.name for f in fields(SolverConfig)},
    "poses": {"label", "position_mm", "orientation"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    scenario: Scenario
    raw: dict
    family: str = "four_by_m"
    sizes: tuple[int, ...] = ()
    axis: str = "vertical_height"
    offsets: tuple[float, ...] = ()
    explicit_poses: bool = False
    source: str = ""


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return Path(str(resources.files("magloc") / "presets" / f"{name}.toml"))


def _check_keys(section: str, table: dict) -> None:
    extra = set(table) - _KNOWN[section]
    if extra:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(extra))}")


def _poses(items) -> tuple[LabeledPose, ...]:
    out = []
    for k, p in enumerate(items):
        _check_keys("poses", p)
        if "position_mm" not in p:
            raise ConfigError(f"pose {k + 1} needs position_mm")
        pos = tuple(float(v) * MM for v in p["position_mm"])
        if len(pos) != 3:
            raise ConfigError(f"pose {k + 1}: position_mm needs 3 values")
        ori = p.get("orientation", [0.0, 0.0, 1.0])
        ori = None if ori == "random" else tuple(float(v) for v in ori)
        out.append(LabeledPose(str(p.get("label", f"P{k + 1}")), pos, ori))
    return tuple(out)


def parse_config(data: dict, source: str = "", base_dir: Path | None = None) -> ExperimentConfig:
    for section in data:
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
    exp = data.get("experiment", {})
    for section in ("experiment", "array", "magnet", "sensor", "filter", "solver"):
        _check_keys(section, data.get(section, {}))
    kind = exp.get("kind", "scenario")
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    try:
        arr_cfg = data.get("array", {})
        if "file" in arr_cfg:
            path = Path(arr_cfg["file"])
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            array = load_array(path)
        else:
            pitch = arr_cfg.get("pitch_mm")
            array = paper_layouts(
                int(arr_cfg.get("size", 5)), arr_cfg.get("family", "four_by_m"),
                permissive=bool(arr_cfg.get("permissive", False)),
                pitch=None if pitch is None else float(pitch) * MM,
            )
        m = data.get("magnet", {})
        magnet = MagnetSpec(
            length_L=float(m.get("length_mm", 2.0)) * MM,
            radius_r=float(m.get("radius_mm", 1.0)) * MM,
            magnetization_M0=float(m.get("magnetization", 8e5)),
            mu_r=float(m.get("mu_r", 1.0)),
        )
        s = data.get("sensor", {})
        sigma = s.get("noise_sigma_uT", 1.0)
        sigma = tuple(float(v) * UT for v in sigma) if isinstance(sigma, list) else float(sigma) * UT
        sensor = SensorModel(
            resolution=float(s.get("resolution_uT", 0.161)) * UT,
            full_scale=float(s.get("full_scale_uT", 44000.0)) * UT,
            noise_sigma=sigma,
            quantize=bool(s.get("quantize", True)),
        )
        f = data.get("filter", {})
        solver = SolverConfig(**data.get("solver", {}))
        poses = _poses(data.get("poses", []))
        explicit = bool(poses)
        if not poses:
            c = array.centroid
            poses = (LabeledPose("center", (float(c[0]), float(c[1]), float(array.sensors[:, 2].max()) + 0.03)),)
        scenario = Scenario(
            name=str(exp.get("name", kind)),
            array=array,
            poses=poses,
            magnet=magnet,
            sensor=sensor,
            filter_enabled=bool(f.get("enabled", False)),
            window=int(f.get("window", 4)),
            cycles=int(f.get("cycles", 2)),
            warmup=int(f.get("warmup", 0)),
            solver=solver,
            trials=int(exp.get("trials", 1)),
            seed=int(exp.get("seed", 0)),
        )
        sizes = tuple(int(v) for v in exp.get("sizes", ()))
        offsets = tuple(float(v) * MM for v in exp.get("offsets_mm", ()))
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from exc
    if kind == "sensor_count" and not sizes:
        raise ConfigError("sensor_count experiments need experiment.sizes")
    if kind == "geometry" and not offsets:
        raise ConfigError("geometry experiments need experiment.offsets_mm")
    return ExperimentConfig(
        kind=kind, scenario=scenario, raw=data,
        family=exp.get("family", arr_cfg.get("family", "four_by_m")), sizes=sizes,
        axis=exp.get("axis", "vertical_height"), offsets=offsets,
        explicit_poses=explicit, source=source,
    )


def load_config(path_or_preset) -> ExperimentConfig:
    """Load a config file, or a bundled preset by name."""
    p = Path(path_or_preset)
    if not p.exists() and str(path_or_preset) in PRESETS:
        p = preset_path(str(path_or_preset))
    if not p.exists():
        raise ConfigError(f"no such config file or preset: {path_or_preset}")
    try:
        data = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return parse_config(data, source=str(p), base_dir=p.parent)
