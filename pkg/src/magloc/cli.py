"""Command line interface: ``magloc simulate | localize | experiment | filter-compare``.

Lengths on the command line are millimetres, fields are microtesla and
angles are degrees. Internally everything is SI.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import PRESETS, ConfigError, ExperimentConfig, load_config
from .field_model import MagnetPose, MagnetSpec
from .harness import (
    ResultTable,
    experiment_filter_comparison,
    experiment_geometry,
    experiment_positions,
    experiment_sensor_count,
    run_scenario,
)
from .localization import SolverConfig, localize
from .measurement import UT, SensorModel, moving_average_filter, read_stream, simulate_stream, write_stream
from .metrics import pose_error
from .sensor_array import FAMILY_PITCH, load_array, paper_layouts, save_array

MM = 1e-3


def run_experiment(cfg: ExperimentConfig, trials=None, noise_sigma_uT=None, seed=None) -> ResultTable:
    """Run a loaded config, with optional CLI overrides, into one combined table."""
    s = cfg.scenario
    changes = {}
    if trials is not None:
        changes["trials"] = trials
    if seed is not None:
        changes["seed"] = seed
    if noise_sigma_uT is not None:
        changes["sensor"] = replace(s.sensor, noise_sigma=noise_sigma_uT * UT)
    s = replace(s, **changes)

    if cfg.kind == "scenario":
        return run_scenario(s)
    if cfg.kind == "sensor_count":
        table = ResultTable()
        for t in experiment_sensor_count(cfg.family, cfg.sizes, s).values():
            table.extend(t)
        return table
    if cfg.kind == "geometry":
        return experiment_geometry(cfg.axis, cfg.offsets, s)
    if cfg.kind == "positions":
        return experiment_positions(s, s.poses if cfg.explicit_poses else None)
    filtered, raw = experiment_filter_comparison(s)
    return filtered.extend(raw)


def write_outputs(table: ResultTable, cfg: ExperimentConfig, out_dir, overrides: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(table.results_csv())
    (out / "aggregates.csv").write_text(table.aggregates_csv())
    meta = {
        "version": __version__,
        "backend": BACKEND,
        "kind": cfg.kind,
        "source": cfg.source,
        "seed": overrides.get("seed") if overrides.get("seed") is not None else cfg.scenario.seed,
        "overrides": {k: v for k, v in overrides.items() if v is not None},
        "config": cfg.raw,
        "rows": len(table),
        "noise_residual_T": {k: [float(x) for x in v] for k, v in table.residual_stats.items()},
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _summary(table: ResultTable) -> str:
    lines = [f"{'scenario':<40} {'pose':<24} {'Ep mean':>9} {'Ep max':>9} {'theta mean':>10} {'n':>5} {'fail':>4}"]
    aggs = table.aggregates()
    by_key = {(a["scenario"], a["pose_id"], a["metric"]): a for a in aggs}
    for a in aggs:
        if a["metric"] != "Ep_mm":
            continue
        th = by_key[(a["scenario"], a["pose_id"], "theta_deg")]
        lines.append(
            f"{a['scenario']:<40} {a['pose_id']:<24} {a['mean']:9.3f} {a['max']:9.3f} "
            f"{th['mean']:10.3f} {a['n']:5d} {a['failed']:4d}"
        )
    return "\n".join(lines)


def _array_from_args(args):
    if args.array_file:
        return load_array(args.array_file)
    return paper_layouts(args.size, args.family, permissive=True)


def _magnet_from_args(args) -> MagnetSpec:
    return MagnetSpec(length_L=args.length_mm * MM, radius_r=args.radius_mm * MM,
                      magnetization_M0=args.magnetization, mu_r=args.mu_r)


def cmd_simulate(args) -> int:
    array = _array_from_args(args)
    pose = MagnetPose.normalized(np.array(args.pose_mm) * MM, args.orientation)
    model = SensorModel(noise_sigma=(args.noise_sigma if args.noise_sigma is not None else 0.0) * UT,
                        quantize=not args.no_quantize)
    stream = simulate_stream(array, pose, _magnet_from_args(args), model, args.frames, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stream(stream, out / "readings.csv")
    save_array(array, out / "array.txt")
    truth = {"position_mm": list(pose.position / MM), "orientation": list(pose.orientation)}
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    print(f"wrote {len(stream)} frames x {len(array)} sensors to {out}")
    return 0


def cmd_localize(args) -> int:
    array = _array_from_args(args)
    stream = read_stream(args.readings)
    if stream.n_sensors != len(array):
        raise ConfigError(f"readings list {stream.n_sensors} sensors but the array has {len(array)}")
    if args.window > 1:
        stream = moving_average_filter(stream, args.window)
    frame = stream.frame(args.frame if args.frame is not None else len(stream) - 1)
    config = SolverConfig(init_strategy=args.init, multistart_count=args.starts)
    rep = localize(frame, array, _magnet_from_args(args), config)
    out = {
        "position_mm": [float(v) for v in rep.pose.position / MM],
        "orientation": [float(v) for v in rep.pose.orientation],
        "converged": rep.converged,
        "degenerate": rep.degenerate,
        "termination": rep.termination_reason.value,
        "iterations": rep.iterations,
        "final_cost_T2": rep.final_cost,
        "residual_rms_uT": rep.residual_rms / UT,
    }
    if args.truth_mm is not None:
        truth = MagnetPose.normalized(np.array(args.truth_mm) * MM, args.truth_orientation)
        err = pose_error(rep.pose, truth)
        out.update(Ep_mm=err.position_error / MM, Eo=err.orientation_error,
                   theta_deg=math.degrees(err.orientation_angle))
    print(json.dumps(out, indent=2))
    return 0


def _run_and_write(cfg, args) -> int:
    overrides = {"trials": args.trials, "noise_sigma_uT": args.noise_sigma, "seed": args.seed}
    table = run_experiment(cfg, args.trials, args.noise_sigma, args.seed)
    out_dir = args.out_dir or f"runs/{cfg.scenario.name}"
    write_outputs(table, cfg, out_dir, overrides)
    print(_summary(table))
    for name, res in table.residual_stats.items():
        print(f"{name}: mean |raw - filtered| per axis (uT) = " + ", ".join(f"{v / UT:.4f}" for v in res))
    print(f"wrote results to {out_dir}")
    return 0


def cmd_experiment(args) -> int:
    return _run_and_write(load_config(args.config), args)


def cmd_filter_compare(args) -> int:
    cfg = load_config(args.config or "filter_compare")
    if args.window is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, window=args.window))
    cfg = replace(cfg, kind="filter_compare")
    return _run_and_write(cfg, args)


def _add_run_flags(p):
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out-dir", help="output directory (default runs/<name>)")
    p.add_argument("--noise-sigma", type=float, help="per-axis noise sigma in uT")
    p.add_argument("--trials", type=int, help="trials per pose")


def _add_geometry_flags(p):
    p.add_argument("--array-file", help="sensor array file (x y z meters per line)")
    p.add_argument("--family", choices=sorted(FAMILY_PITCH), default="four_by_m")
    p.add_argument("--size", type=int, default=5, help="n or m of the layout family")
    p.add_argument("--length-mm", type=float, default=2.0)
    p.add_argument("--radius-mm", type=float, default=1.0)
    p.add_argument("--magnetization", type=float, default=8e5, help="A/m")
    p.add_argument("--mu-r", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic readings for one magnet pose")
    _add_geometry_flags(p)
    p.add_argument("--pose-mm", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    p.add_argument("--orientation", type=float, nargs=3, default=[0.0, 0.0, 1.0], metavar=("M", "N", "P"))
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--no-quantize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, help="per-axis noise sigma in uT (default 0)")
    p.add_argument("--out-dir", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("localize", help="estimate the magnet pose from a readings CSV")
    _add_geometry_flags(p)
    p.add_argument("--readings", required=True, help="CSV with frame,sensor,bx,by,bz,saturated")
    p.add_argument("--frame", type=int, help="frame position to solve (default: last)")
    p.add_argument("--window", type=int, default=1, help="moving-average window applied first")
    p.add_argument("--init", choices=["centroid", "grid"], default="centroid")
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--truth-mm", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--truth-orientation", type=float, nargs=3, default=[0.0, 0.0, 1.0])
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("experiment", help=f"run a preset ({', '.join(PRESETS)}) or config file")
    p.add_argument("config")
    _add_run_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("filter-compare", help="filtered vs raw localization on identical noise")
    p.add_argument("--config", help="config file (default: filter_compare preset)")
    p.add_argument("--window", type=int)
    _add_run_flags(p)
    p.set_defaults(func=cmd_filter_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"magloc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
