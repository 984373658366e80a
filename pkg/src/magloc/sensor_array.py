"""Planar magnetometer array layouts and the plain-text array file format.

File format: one sensor per line, three whitespace separated coordinates in
meters. Blank lines and anything after ``#`` are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_SEPARATION = 1e-9

# pitch in meters for each layout family
FAMILY_PITCH = {"two_by_n": 2e-3, "four_by_m": 30e-3}
FAMILY_ROWS = {"two_by_n": 2, "four_by_m": 4}
FAMILY_SIZES = {"two_by_n": (3, 4, 6, 8), "four_by_m": (2, 3, 4, 5)}


class ArrayFileError(ValueError):
    pass


@dataclass(frozen=True)
class SensorArray:
    """Ordered, immutable set of sensor positions (N, 3) in meters."""

    sensors: np.ndarray
    name: str = "array"

    def __post_init__(self):
        pts = np.array(self.sensors, dtype=float)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"sensor positions must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise ValueError("sensor array needs at least one sensor")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sensor positions must be finite")
        if len(pts) > 1:
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            d[np.diag_indices(len(pts))] = np.inf
            if d.min() < MIN_SEPARATION:
                i, j = np.unravel_index(np.argmin(d), d.shape)
                raise ValueError(f"sensors {min(i, j)} and {max(i, j)} coincide")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "sensors", pts)

    def __len__(self) -> int:
        return len(self.sensors)

    @property
    def centroid(self) -> np.ndarray:
        return self.sensors.mean(axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sensors.min(axis=0), self.sensors.max(axis=0)

    def __eq__(self, other):
        if not isinstance(other, SensorArray):
            return NotImplemented
        return self.sensors.shape == other.sensors.shape and np.array_equal(self.sensors, other.sensors)

    __hash__ = None


@dataclass(frozen=True)
class GridLayoutSpec:
    rows: int
    cols: int
    pitch_x: float
    pitch_y: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    plane_z: float = 0.0
    centered: bool = True

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid needs rows >= 1 and cols >= 1, got {self.rows}x{self.cols}")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ValueError("grid pitches must be positive")


def make_grid(spec: GridLayoutSpec, name: str | None = None) -> SensorArray:
    """Row-major rows x cols grid in the plane z = plane_z.

    Columns run along x, rows along y. With ``centered`` the grid centroid
    sits on ``origin``; otherwise sensor (0, 0) sits on it.
    """
    ox, oy, _ = spec.origin
    j, i = np.meshgrid(np.arange(spec.cols), np.arange(spec.rows))
    x = j.ravel() * spec.pitch_x
    y = i.ravel() * spec.pitch_y
    if spec.centered:
        x = x - (spec.cols - 1) * spec.pitch_x / 2
        y = y - (spec.rows - 1) * spec.pitch_y / 2
    pts = np.column_stack([x + ox, y + oy, np.full(x.shape, float(spec.plane_z))])
    return SensorArray(pts, name or f"grid_{spec.rows}x{spec.cols}")


def paper_layouts(
    count: int,
    family: str,
    origin=(0.0, 0.0, 0.0),
    permissive: bool = False,
    pitch: float | None = None,
) -> SensorArray:
    """The symmetric 2 x n (2 mm pitch) and 4 x m (30 mm pitch) planar arrays."""
    if family not in FAMILY_PITCH:
        raise ValueError(f"unknown layout family {family!r}; expected one of {sorted(FAMILY_PITCH)}")
    if count not in FAMILY_SIZES[family] and not (permissive and count >= 1):
        raise ValueError(f"{family} supports sizes {FAMILY_SIZES[family]}, got {count}")
    p = FAMILY_PITCH[family] if pitch is None else pitch
    spec = GridLayoutSpec(
        rows=FAMILY_ROWS[family], cols=count, pitch_x=p, pitch_y=p,
        origin=tuple(origin), plane_z=float(origin[2]), centered=True,
    )
    letter = "n" if family == "two_by_n" else "m"
    return make_grid(spec, name=f"{family}_{letter}{count}")


def save_array(array: SensorArray, path) -> None:
    lines = [f"# layout: {array.name}", f"# sensors: {len(array)}", "# x y z (meters)"]
    lines += [" ".join(repr(float(v)) for v in row) for row in array.sensors]
    Path(path).write_text("\n".join(lines) + "\n")


def load_array(path, name: str | None = None) -> SensorArray:
    path = Path(path)
    text = path.read_text()
    layout = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        if layout is None and comment.strip().startswith("layout:"):
            layout = comment.strip()[len("layout:"):].strip()
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ArrayFileError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
        try:
            xyz = [float(v) for v in parts]
        except ValueError:
            raise ArrayFileError(f"{path}:{lineno}: could not parse {line!r}") from None
        if not all(math.isfinite(v) for v in xyz):
            raise ArrayFileError(f"{path}:{lineno}: non-finite coordinate")
        rows.append(xyz)
    if not rows:
        raise ArrayFileError(f"{path}: no sensor positions found")
    pts = np.array(rows)
    for k in range(1, len(pts)):
        d = np.linalg.norm(pts[:k] - pts[k], axis=1)
        if d.min() < MIN_SEPARATION:
            raise ArrayFileError(f"{path}: duplicate sensor position at entry {k + 1}")
    return SensorArray(pts, name or layout or path.stem)
