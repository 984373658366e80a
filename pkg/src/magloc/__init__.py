"""Permanent magnet localization from 3-axis magnetometer arrays.

Dipole forward model, Levenberg-Marquardt pose solver, synthetic sensor
simulation and a Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .field_model import MagnetPose, MagnetSpec, SingularityError, dipole_strength, flux_at, flux_jacobian
from .localization import EstimateReport, PoseParams, SolverConfig, initial_guess, lm_solve, localize, objective
from .measurement import ReadingSet, ReadingStream, SensorModel, simulate_readings, simulate_stream
from .metrics import PoseError, orientation_angle, orientation_error, pose_error, position_error
from .sensor_array import GridLayoutSpec, SensorArray, load_array, make_grid, paper_layouts, save_array

__all__ = [
    "BACKEND", "EstimateReport", "GridLayoutSpec", "MagnetPose", "MagnetSpec", "PoseError",
    "PoseParams", "ReadingSet", "ReadingStream", "SensorArray", "SensorModel", "SingularityError",
    "SolverConfig", "dipole_strength", "flux_at", "flux_jacobian", "initial_guess", "lm_solve",
    "load_array", "localize", "make_grid", "objective", "orientation_angle", "orientation_error",
    "paper_layouts", "pose_error", "position_error", "save_array", "simulate_readings",
    "simulate_stream",
]
