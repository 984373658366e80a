"""Monte Carlo experiment runner on synthetic magnetometer data.

Every trial draws its own noise stream from a seed derived from
(master seed, scenario name, pose index, trial index), so tables are
reproducible and independent of execution order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .field_model import MagnetPose, MagnetSpec
from .localization import SolverConfig, localize
from .measurement import (
    ReadingStream,
    SensorModel,
    moving_average_filter,
    noise_residual_stats,
    simulate_stream,
    warmup_trim,
)
from .metrics import aggregate, pose_error
from .sensor_array import SensorArray, paper_layouts

ROW_FIELDS = [
    "scenario", "pose_id", "trial", "Ep_mm", "Eo", "theta_deg",
    "converged", "iterations", "final_cost", "failed", "error",
]
AGG_FIELDS = [
    "scenario", "pose_id", "metric", "mean", "max", "min", "n", "failed",
]
METRIC_OUT = {
    "position_error": ("Ep_mm", 1e3),
    "orientation_error": ("Eo", 1.0),
    "orientation_angle": ("theta_deg", 180.0 / math.pi),
}

GEOMETRY_HEIGHT = 0.03
POSITIONS_HEIGHT = 0.03
POSITIONS_MARGIN = 0.03


def trial_seed(master: int, scenario: str, pose_index: int, trial: int) -> int:
    """Stable 64-bit seed: BLAKE2b-8 of ``"master:scenario:pose:trial"``."""
    key = f"{master}:{scenario}:{pose_index}:{trial}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def random_unit(seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class LabeledPose:
    label: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float] | None = (0.0, 0.0, 1.0)
    # None draws a fresh random orientation per trial


@dataclass(frozen=True)
class Scenario:
    name: str
    array: SensorArray
    poses: tuple[LabeledPose, ...]
    magnet: MagnetSpec = MagnetSpec()
    sensor: SensorModel = SensorModel(noise_sigma=1e-6)
    filter_enabled: bool = False
    window: int = 4
    cycles: int = 2
    warmup: int = 0
    solver: SolverConfig = SolverConfig()
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.poses:
            raise ValueError("scenario needs at least one pose")
        labels = [p.label for p in self.poses]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate pose labels in {labels}")
        if self.window < 1 or self.cycles < 1 or self.warmup < 0:
            raise ValueError("window and cycles must be >= 1, warmup >= 0")

    @property
    def n_frames(self) -> int:
        return self.warmup + self.window * self.cycles


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)
    residual_stats: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def extend(self, other: "ResultTable") -> "ResultTable":
        self.rows.extend(other.rows)
        self.residual_stats.update(other.residual_stats)
        return self

    def groups(self) -> dict[tuple[str, str], list[dict]]:
        out: dict[tuple[str, str], list[dict]] = {}
        for row in self.rows:
            out.setdefault((row["scenario"], row["pose_id"]), []).append(row)
            out.setdefault((row["scenario"], "*"), []).append(row)
        return out

    def aggregates(self) -> list[dict]:
        """Mean/max/min per (scenario, pose) and per scenario (pose_id ``*``).

        Failed trials are excluded and counted in ``failed``.
        """
        out = []
        for (scen, pose_id), rows in self.groups().items():
            good = [r for r in rows if not r["failed"]]
            failed = len(rows) - len(good)
            errs = [r["_error"] for r in good]
            agg = aggregate(errs) if errs else None
            for metric, (col, scale) in METRIC_OUT.items():
                if agg is None:
                    vals = {"mean": math.nan, "max": math.nan, "min": math.nan}
                else:
                    vals = {k: v * scale for k, v in agg[metric].items()}
                out.append({"scenario": scen, "pose_id": pose_id, "metric": col, **vals,
                            "n": len(good), "failed": failed})
        return out

    def mean(self, metric: str = "Ep_mm", scenario: str | None = None, pose_id: str = "*") -> float:
        for a in self.aggregates():
            if a["metric"] == metric and a["pose_id"] == pose_id and (scenario is None or a["scenario"] == scenario):
                return a["mean"]
        raise KeyError((scenario, pose_id, metric))

    def results_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ROW_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(row[k]) for k in ROW_FIELDS})
        return buf.getvalue()

    def aggregates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, AGG_FIELDS, lineterminator="\n")
        w.writeheader()
        for a in self.aggregates():
            w.writerow({k: _fmt(a[k]) for k in AGG_FIELDS})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _pose_for_trial(lp: LabeledPose, seed: int) -> MagnetPose:
    if lp.orientation is None:
        return MagnetPose(lp.position, random_unit(seed ^ 0x5EED))
    return MagnetPose.normalized(lp.position, lp.orientation)


def _simulate(s: Scenario, truth: MagnetPose, seed: int) -> ReadingStream:
    stream = simulate_stream(s.array, truth, s.magnet, s.sensor, s.n_frames, seed)
    return warmup_trim(stream, s.warmup)


def _evaluate(s: Scenario, stream: ReadingStream, truth: MagnetPose, pose_id: str, trial: int) -> dict:
    row = {"scenario": s.name, "pose_id": pose_id, "trial": trial}
    try:
        rep = localize(stream.frame(len(stream) - 1), s.array, s.magnet, s.solver)
        err = pose_error(rep.pose, truth)
    except Exception as exc:  # recorded, never aborts the table
        row.update(Ep_mm="", Eo="", theta_deg="", converged=False, iterations=0,
                   final_cost="", failed=True, error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
        return row
    row.update(
        Ep_mm=err.position_error * 1e3, Eo=err.orientation_error,
        theta_deg=math.degrees(err.orientation_angle), converged=rep.converged,
        iterations=rep.iterations, final_cost=rep.final_cost, failed=False, error="",
        _error=err, _report=rep,
    )
    return row


def _branches(s: Scenario, filtered: bool, seed_name: str | None = None):
    """Yield (pose_index, label, trial, truth, raw_stream, filtered_stream)."""
    for i, lp in enumerate(s.poses):
        for t in range(s.trials):
            seed = trial_seed(s.seed, seed_name or s.name, i, t)
            truth = _pose_for_trial(lp, seed)
            try:
                stream = _simulate(s, truth, seed)
            except Exception as exc:
                yield i, lp.label, t, truth, exc, exc
                continue
            yield i, lp.label, t, truth, stream, moving_average_filter(stream, s.window) if filtered else stream


def _failed_row(s: Scenario, label: str, trial: int, exc: Exception) -> dict:
    return {"scenario": s.name, "pose_id": label, "trial": trial, "Ep_mm": "", "Eo": "",
            "theta_deg": "", "converged": False, "iterations": 0, "final_cost": "",
            "failed": True, "error": f"{type(exc).__name__}: {exc}".replace("\n", " ")}


def run_scenario(s: Scenario, seed_name: str | None = None) -> ResultTable:
    """One row per (pose, trial), localizing on the final (optionally filtered) frame.

    Trial seeds are keyed on ``seed_name`` (default: the scenario name).
    """
    table = ResultTable()
    for _, label, t, truth, raw, filt in _branches(s, s.filter_enabled, seed_name):
        if isinstance(raw, Exception):
            table.rows.append(_failed_row(s, label, t, raw))
            continue
        table.rows.append(_evaluate(s, filt, truth, label, t))
    return table


def experiment_sensor_count(family: str, sizes, base: Scenario, permissive: bool = False) -> dict[int, ResultTable]:
    """Same poses and noise seeds over each array size of a layout family."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sizes must not be empty")
    out = {}
    for n in sizes:
        arr = paper_layouts(n, family, permissive=permissive)
        out[n] = run_scenario(replace(base, name=f"{base.name}/{arr.name}", array=arr), seed_name=base.name)
    return out


def geometry_poses(axis: str, offsets, array: SensorArray, orientation=(0.0, 0.0, 1.0)) -> tuple[LabeledPose, ...]:
    offsets = list(offsets)
    if not offsets:
        raise ValueError("offsets must not be empty")
    if any(not o > 0 for o in offsets):
        raise ValueError("offsets must be positive")
    c = array.centroid
    lo, hi = array.bounds()
    top = hi[2]
    poses = []
    for o in offsets:
        if axis == "vertical_height":
            pos = (c[0], c[1], top + o)
        elif axis == "horizontal_distance":
            pos = (hi[0] + o, c[1], top + GEOMETRY_HEIGHT)
        else:
            raise ValueError(f"unknown geometry axis {axis!r}")
        poses.append(LabeledPose(f"{axis}_{o * 1e3:g}mm", tuple(float(v) for v in pos), orientation))
    return tuple(poses)


def experiment_geometry(axis: str, offsets, base: Scenario) -> ResultTable:
    """Magnet ``offset`` above the array centre (vertical), or ``offset`` beyond
    the array's +x edge at 30 mm height (horizontal)."""
    poses = geometry_poses(axis, offsets, base.array, base.poses[0].orientation if base.poses else (0, 0, 1))
    return run_scenario(replace(base, name=f"{base.name}/{axis}", poses=poses))


def five_positions(array: SensorArray, height: float = POSITIONS_HEIGHT,
                   margin: float = POSITIONS_MARGIN, orientation=(0.0, 0.0, 1.0)) -> tuple[LabeledPose, ...]:
    """Centre (No.3) plus points ``margin`` outside each edge midpoint."""
    lo, hi = array.bounds()
    c = array.centroid
    z = hi[2] + height
    pts = [
        ("No.1", (lo[0] - margin, c[1], z)),
        ("No.2", (c[0], lo[1] - margin, z)),
        ("No.3", (c[0], c[1], z)),
        ("No.4", (c[0], hi[1] + margin, z)),
        ("No.5", (hi[0] + margin, c[1], z)),
    ]
    return tuple(LabeledPose(lbl, tuple(float(v) for v in p), orientation) for lbl, p in pts)


def experiment_positions(base: Scenario, positions=None) -> ResultTable:
    poses = tuple(positions) if positions is not None else five_positions(base.array)
    return run_scenario(replace(base, name=f"{base.name}/positions", poses=poses))


def experiment_filter_comparison(base: Scenario) -> tuple[ResultTable, ResultTable]:
    """Filtered and raw branches fed identical noise realizations.

    Returns (filtered, raw). The filtered table carries the per-axis mean
    |raw - filtered| residual in ``residual_stats``. With a window of 1 the
    two branches are identical.
    """
    filt_s = replace(base, name=f"{base.name}/filtered", filter_enabled=True)
    raw_s = replace(base, name=f"{base.name}/raw", filter_enabled=False)
    filtered, raw = ResultTable(), ResultTable()
    residuals = []
    for _, label, t, truth, rs, fs in _branches(base, True):
        if isinstance(rs, Exception):
            filtered.rows.append(_failed_row(filt_s, label, t, rs))
            raw.rows.append(_failed_row(raw_s, label, t, rs))
            continue
        residuals.append(noise_residual_stats(rs, fs))
        filtered.rows.append(_evaluate(filt_s, fs, truth, label, t))
        raw.rows.append(_evaluate(raw_s, rs, truth, label, t))
    if residuals:
        filtered.residual_stats[filt_s.name] = np.mean(residuals, axis=0)
    return filtered, raw
