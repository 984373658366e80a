"""Magnetic dipole forward model for a small cylindrical permanent magnet.

All quantities are SI: meters, tesla, A/m. The flux density at a point P
relative to the magnet centre is

    B = B_T * (3 (h . P) P / R^5 - h / R^3),   R = |P|

with ``h`` the unit south-to-north axis of the magnet and ``B_T`` the dipole
strength derived from the magnet geometry and magnetization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels

MU_0 = 4e-7 * math.pi
SINGULARITY_EPS = 1e-6
UNIT_TOL = 1e-9


class SingularityError(ValueError):
    """A sensor coincides with the magnet centre (R below the cut-off)."""


@dataclass(frozen=True)
class MagnetSpec:
    """Cylindrical magnet geometry and material.

    Defaults describe a 2 mm long, 1 mm radius NdFeB cylinder.
    """

    length_L: float = 2e-3
    radius_r: float = 1e-3
    magnetization_M0: float = 8e5
    mu_r: float = 1.0
    mu_0: float = MU_0

    def __post_init__(self):
        for name in ("length_L", "radius_r", "magnetization_M0", "mu_r", "mu_0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def strength(self) -> float:
        return dipole_strength(self)


@dataclass(frozen=True)
class MagnetPose:
    """Magnet centre ``position`` (a, b, c) and unit axis ``orientation`` (m, n, p)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        ori = np.array(self.orientation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ori))):
            raise ValueError("pose must be finite")
        if abs(np.linalg.norm(ori) - 1.0) > UNIT_TOL:
            raise ValueError(f"orientation must be a unit vector, |h|={np.linalg.norm(ori)!r}")
        pos.flags.writeable = False
        ori.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", ori)

    @classmethod
    def normalized(cls, position, orientation) -> "MagnetPose":
        """Build a pose, rescaling ``orientation`` to unit length."""
        ori = np.asarray(orientation, dtype=float)
        norm = np.linalg.norm(ori)
        if norm == 0:
            raise ValueError("orientation must be non-zero")
        return cls(position, ori / norm)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])


def dipole_strength(spec: MagnetSpec) -> float:
    """Dipole strength B_T = mu_r mu_0 pi r^2 L M0 / (4 pi), in T*m^3."""
    return spec.mu_r * spec.mu_0 * spec.radius_r**2 * spec.length_L * spec.magnetization_M0 / 4.0


def _as_points(points) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) sensor positions, got shape {pts.shape}")
    return pts


def _call(fn, *args):
    try:
        return fn(*args)
    except ValueError as exc:
        if "lies within" in str(exc):
            raise SingularityError(str(exc)) from None
        raise


def flux_array(pose: MagnetPose, spec: MagnetSpec | float, sensors, eps: float = SINGULARITY_EPS) -> np.ndarray:
    """Flux density at every row of ``sensors``; returns an (N, 3) array.

    ``spec`` may be a MagnetSpec or an already computed dipole strength.
    """
    bt = spec if isinstance(spec, float) else dipole_strength(spec)
    return _call(kernels.flux, _as_points(sensors), pose.position, pose.orientation, float(bt), eps)


def flux_at(pose: MagnetPose, spec: MagnetSpec | float, sensor_pos, eps: float = SINGULARITY_EPS) -> np.ndarray:
    """Flux (bx, by, bz) in tesla at a single sensor position."""
    return flux_array(pose, spec, np.asarray(sensor_pos, dtype=float).reshape(1, 3), eps)[0]


def flux_jacobian_array(pose: MagnetPose, spec: MagnetSpec | float, sensors, eps: float = SINGULARITY_EPS) -> np.ndarray:
    bt = spec if isinstance(spec, float) else dipole_strength(spec)
    return _call(kernels.flux_jacobian, _as_points(sensors), pose.position, pose.orientation, float(bt), eps)


def flux_jacobian(pose: MagnetPose, spec: MagnetSpec | float, sensor_pos, eps: float = SINGULARITY_EPS) -> np.ndarray:
    """3x6 matrix of d(bx, by, bz)/d(a, b, c, m, n, p).

    Position columns are in T/m, orientation columns in T. The orientation
    columns are the unconstrained partials; the unit-norm constraint is
    applied by the caller's parameterization.
    """
    return flux_jacobian_array(pose, spec, np.asarray(sensor_pos, dtype=float).reshape(1, 3), eps)[0]
