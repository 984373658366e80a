"""Pose error metrics: position error, orientation error and folded axis angle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field_model import MagnetPose

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class PoseError:
    position_error: float  # meters
    orientation_error: float  # dimensionless, in [0, 2]
    orientation_angle: float  # radians, in [0, pi/2]

    @property
    def angle_deg(self) -> float:
        return math.degrees(self.orientation_angle)


def position_error(calc, truth) -> float:
    """Euclidean distance between estimated and true positions."""
    a = calc.position if isinstance(calc, MagnetPose) else np.asarray(calc, float)
    b = truth.position if isinstance(truth, MagnetPose) else np.asarray(truth, float)
    return float(np.linalg.norm(a - b))


def orientation_error(calc, truth) -> float:
    """Euclidean distance between two unit orientation vectors."""
    a = calc.orientation if isinstance(calc, MagnetPose) else np.asarray(calc, float)
    b = truth.orientation if isinstance(truth, MagnetPose) else np.asarray(truth, float)
    for v in (a, b):
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValueError(f"orientation {v} is not a unit vector")
    return float(np.linalg.norm(a - b))


def orientation_angle(calc, truth) -> float:
    """arccos of the absolute normalized dot product, in [0, pi/2].

    Antipodal axes fold to zero.
    """
    a = calc.orientation if isinstance(calc, MagnetPose) else np.asarray(calc, float)
    b = truth.orientation if isinstance(truth, MagnetPose) else np.asarray(truth, float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("orientation vectors must be non-zero")
    c = abs(float(np.dot(a, b))) / (na * nb)
    return math.acos(min(c, 1.0))


def pose_error(calc: MagnetPose, truth: MagnetPose) -> PoseError:
    return PoseError(position_error(calc, truth), orientation_error(calc, truth), orientation_angle(calc, truth))


def aggregate(errors) -> dict[str, dict[str, float]]:
    """Mean, max and min of each metric over a non-empty list of PoseError."""
    errors = list(errors)
    if not errors:
        raise ValueError("cannot aggregate an empty list of errors")
    out = {}
    for name in ("position_error", "orientation_error", "orientation_angle"):
        vals = [getattr(e, name) for e in errors]
        out[name] = {"mean": math.fsum(vals) / len(vals), "max": max(vals), "min": min(vals)}
    return out
