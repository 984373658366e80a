"""Magnet pose estimation by damped least squares on the dipole model.

The six unknowns (a, b, c, m, n, p) with m^2 + n^2 + p^2 = 1 are carried as
five free parameters: the position plus polar/azimuth angles of the axis
measured in a local orthonormal frame. The constraint then holds exactly by
construction and the Levenberg-Marquardt machinery is unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._backend import kernels
from .field_model import (
    SINGULARITY_EPS,
    MagnetPose,
    MagnetSpec,
    SingularityError,
    dipole_strength,
)
from .measurement import ReadingSet
from .sensor_array import SensorArray

GIMBAL_SIN = 1e-3
WORKSPACE_MARGIN = 0.25
WORKSPACE_HEIGHT = 0.25
AXES = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)


class Termination(str, Enum):
    GRADIENT = "gradient"
    STEP = "step"
    COST = "cost"
    MAX_ITER = "max_iter"


class InitStrategy(str, Enum):
    CENTROID = "centroid"
    GRID = "grid"


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 200
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    gradient_tol: float = 1e-18
    step_tol: float = 1e-10
    cost_tol: float = 1e-12
    multistart_count: int = 8
    init_strategy: InitStrategy = InitStrategy.CENTROID
    max_damping: float = 1e20

    def __post_init__(self):
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))
        if self.max_iterations < 1 or self.multistart_count < 1:
            raise ValueError("max_iterations and multistart_count must be >= 1")
        for name in ("initial_damping", "gradient_tol", "step_tol", "cost_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.damping_up > 1.0 > self.damping_down > 0.0):
            raise ValueError("need damping_up > 1 > damping_down > 0")


def _anchor_frame(h: np.ndarray) -> np.ndarray:
    """Orthonormal frame whose first column is ``h`` (so h sits on the equator)."""
    h = h / np.linalg.norm(h)
    k = int(np.argmin(np.abs(h)))
    e = np.zeros(3)
    e[k] = 1.0
    e3 = np.cross(h, e)
    e3 /= np.linalg.norm(e3)
    return np.column_stack([h, np.cross(e3, h), e3])


@dataclass(frozen=True)
class PoseParams:
    """Position plus axis angles (theta, phi) in the orthonormal ``frame``.

    orientation = frame @ (sin t cos p, sin t sin p, cos t). With the default
    identity frame these are the usual spherical angles.
    """

    position: np.ndarray
    theta: float
    phi: float
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))

    @classmethod
    def from_pose(cls, pose: MagnetPose) -> "PoseParams":
        h = pose.orientation
        theta = math.acos(max(-1.0, min(1.0, h[2])))
        if math.sin(theta) >= GIMBAL_SIN:
            return cls(np.array(pose.position), theta, math.atan2(h[1], h[0]))
        return cls(np.array(pose.position), math.pi / 2, 0.0, _anchor_frame(h))

    @classmethod
    def from_vector(cls, x, frame) -> "PoseParams":
        return cls(np.array(x[:3]), float(x[3]), float(x[4]), frame)

    @property
    def vector(self) -> np.ndarray:
        return np.array([*self.position, self.theta, self.phi])

    def orientation(self) -> np.ndarray:
        st, ct = math.sin(self.theta), math.cos(self.theta)
        sp, cp = math.sin(self.phi), math.cos(self.phi)
        h = self.frame @ np.array([st * cp, st * sp, ct])
        return h / np.linalg.norm(h)

    def orientation_derivative(self) -> np.ndarray:
        """(3, 2) d(orientation)/d(theta, phi)."""
        st, ct = math.sin(self.theta), math.cos(self.theta)
        sp, cp = math.sin(self.phi), math.cos(self.phi)
        local = np.array([[ct * cp, -st * sp], [ct * sp, st * cp], [-st, 0.0]])
        return np.ascontiguousarray(self.frame @ local)

    def to_pose(self) -> MagnetPose:
        return MagnetPose(self.position, self.orientation())

    def reanchored(self) -> "PoseParams":
        """Same pose, re-expressed so the axis sits on the frame's equator."""
        return PoseParams(np.array(self.position), math.pi / 2, 0.0, _anchor_frame(self.orientation()))


@dataclass
class EstimateReport:
    pose: MagnetPose
    final_cost: float
    iterations: int
    converged: bool
    termination_reason: Termination
    residual_rms: float
    cost_history: list[float] = field(default_factory=list)
    start_index: int = 0
    degenerate: bool = False
    n_sensors: int = 0


def _prepare(readings, array: SensorArray):
    r = readings.readings if isinstance(readings, ReadingSet) else np.asarray(readings, float)
    sensors = array.sensors
    if r.shape != sensors.shape:
        raise ValueError(f"{len(r)} readings for {len(sensors)} sensors")
    return np.ascontiguousarray(sensors), np.ascontiguousarray(r)


def _usable(readings, array: SensorArray):
    """Sensors and readings with saturated channels dropped."""
    sensors, r = _prepare(readings, array)
    if isinstance(readings, ReadingSet) and readings.saturated.any():
        keep = ~readings.saturated
        if not keep.any():
            raise ValueError("every sensor is saturated; nothing to fit")
        return np.ascontiguousarray(sensors[keep]), np.ascontiguousarray(r[keep])
    return sensors, r


def _bt(spec) -> float:
    return float(spec) if isinstance(spec, (int, float)) else dipole_strength(spec)


def _cost(sensors, r, position, orientation, bt) -> float:
    try:
        return kernels.cost(sensors, r, position, orientation, bt, SINGULARITY_EPS)
    except ValueError as exc:
        raise SingularityError(str(exc)) from None


def objective_components(params: PoseParams, readings, array: SensorArray, spec) -> tuple[float, float, float]:
    """Per-axis squared error sums (E_x, E_y, E_z)."""
    sensors, r = _prepare(readings, array)
    pose = params.to_pose() if isinstance(params, PoseParams) else params
    try:
        model = kernels.flux(sensors, pose.position, pose.orientation, _bt(spec), SINGULARITY_EPS)
    except ValueError as exc:
        raise SingularityError(str(exc)) from None
    d = r - model
    e = (d * d).sum(axis=0)
    return float(e[0]), float(e[1]), float(e[2])


def objective(params: PoseParams, readings, array: SensorArray, spec) -> float:
    """Total squared error E = E_x + E_y + E_z in tesla^2."""
    sensors, r = _prepare(readings, array)
    pose = params.to_pose() if isinstance(params, PoseParams) else params
    return _cost(sensors, r, pose.position, pose.orientation, _bt(spec))


def residuals_and_jacobian(params: PoseParams, readings, array: SensorArray, spec):
    """Stacked residuals (model - measured), sensor-major, and the (3N, 5) Jacobian."""
    sensors, r = _prepare(readings, array)
    try:
        return kernels.residuals_jacobian(
            sensors, r, params.position, params.orientation(),
            params.orientation_derivative(), _bt(spec), SINGULARITY_EPS,
        )
    except ValueError as exc:
        raise SingularityError(str(exc)) from None


def height_heuristic(magnitude: float, bt: float) -> float:
    """Distance at which the on-axis dipole field 2 B_T / R^3 equals ``magnitude``."""
    return (2.0 * bt / magnitude) ** (1.0 / 3.0)


def hemisphere_directions(count: int) -> np.ndarray:
    """``count`` unit vectors spread evenly over the upper (z >= 0) hemisphere."""
    k = np.arange(count) + 0.5
    z = 1.0 - k / count
    rho = np.sqrt(1.0 - z * z)
    ang = math.pi * (3.0 - math.sqrt(5.0)) * k
    return np.column_stack([rho * np.cos(ang), rho * np.sin(ang), z])


def workspace_bounds(array: SensorArray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = array.bounds()
    top = hi[2]
    return (
        np.array([lo[0] - WORKSPACE_MARGIN, lo[1] - WORKSPACE_MARGIN, top]),
        np.array([hi[0] + WORKSPACE_MARGIN, hi[1] + WORKSPACE_MARGIN, top + WORKSPACE_HEIGHT]),
    )


def initial_guess(
    readings,
    array: SensorArray,
    spec,
    strategy: InitStrategy | str = InitStrategy.CENTROID,
    count: int = 8,
) -> list[PoseParams]:
    """Candidate starting points for the local solver.

    ``centroid``: the field-magnitude weighted centroid of the sensors,
    lifted along +z by the on-axis distance that explains the strongest
    reading, paired with ``count`` axis seeds over the upper hemisphere.

    ``grid``: a 5 x 5 x 5 lattice over the workspace crossed with the six
    coordinate axes; the ``count`` lowest-objective candidates are returned in
    ascending order of objective.
    """
    strategy = InitStrategy(strategy)
    sat = readings.saturated if isinstance(readings, ReadingSet) else np.zeros(len(array), bool)
    if sat.all():
        raise ValueError("every sensor is saturated; cannot initialise")
    sensors, r = _prepare(readings, array)
    bt = _bt(spec)
    if strategy is InitStrategy.CENTROID:
        s, b = sensors[~sat], r[~sat]
        mags = np.linalg.norm(b, axis=1)
        peak = mags.max()
        if peak > 0:
            centre = (mags[:, None] * s).sum(axis=0) / mags.sum()
            lift = height_heuristic(peak, bt)
        else:
            centre = s.mean(axis=0)
            lift = WORKSPACE_HEIGHT
        pos = centre + np.array([0.0, 0.0, lift])
        return [PoseParams.from_pose(MagnetPose(pos, h)) for h in hemisphere_directions(count)]

    lo, hi = workspace_bounds(array)
    xs = np.linspace(lo[0], hi[0], 5)
    ys = np.linspace(lo[1], hi[1], 5)
    zs = lo[2] + WORKSPACE_HEIGHT * np.arange(1, 6) / 5
    candidates = []
    for x in xs:
        for y in ys:
            for z in zs:
                for h in AXES:
                    pose = MagnetPose(np.array([x, y, z]), h)
                    try:
                        c = _cost(sensors, r, pose.position, pose.orientation, bt)
                    except SingularityError:
                        continue
                    candidates.append((c, len(candidates), pose))
    candidates.sort(key=lambda t: (t[0], t[1]))
    return [PoseParams.from_pose(p) for _, _, p in candidates[:count]]


def _normal(sensors, r, params: PoseParams, bt):
    try:
        return kernels.normal_equations(
            sensors, r, params.position, params.orientation(),
            params.orientation_derivative(), bt, SINGULARITY_EPS,
        )
    except ValueError as exc:
        raise SingularityError(str(exc)) from None


def lm_solve(
    init: PoseParams,
    readings,
    array: SensorArray,
    spec,
    config: SolverConfig = SolverConfig(),
) -> EstimateReport:
    """Levenberg-Marquardt with Marquardt (diag J^T J) damping.

    Each iteration solves (J^T J + lam diag(J^T J)) d = -J^T r. Steps that
    lower the cost are accepted and shrink lam; others are rejected and grow
    it. Stops on a small gradient, a small step, a small relative cost
    decrease, or after ``max_iterations``.
    """
    sensors, r = _usable(readings, array)
    bt = _bt(spec)
    params = init
    A, g, f = _normal(sensors, r, params, bt)
    history = [f]
    lam = config.initial_damping
    reason = Termination.MAX_ITER
    it = 0
    while it < config.max_iterations:
        if f == 0.0:
            reason = Termination.COST
            break
        if np.max(np.abs(g)) < config.gradient_tol:
            reason = Termination.GRADIENT
            break
        it += 1
        x = params.vector
        scale = np.diag(A).copy()
        scale[scale <= 0] = 1e-300
        try:
            delta = np.linalg.solve(A + lam * np.diag(scale), -g)
        except np.linalg.LinAlgError:
            delta = None
        if delta is None or not np.all(np.isfinite(delta)):
            lam *= config.damping_up
            if lam > config.max_damping:
                reason = Termination.STEP
                break
            continue
        small_step = np.linalg.norm(delta) <= config.step_tol * (np.linalg.norm(x) + config.step_tol)
        trial = PoseParams.from_vector(x + delta, params.frame)
        try:
            f_new = _cost(sensors, r, trial.position, trial.orientation(), bt)
        except SingularityError:
            f_new = math.inf
        if f_new < f:
            if math.sin(trial.theta) < GIMBAL_SIN:
                trial = trial.reanchored()
            rel = (f - f_new) / f
            params = trial
            A, g, f = _normal(sensors, r, params, bt)
            history.append(f)
            lam = max(lam * config.damping_down, 1e-300)
            if small_step:
                reason = Termination.STEP
                break
            if rel < config.cost_tol:
                reason = Termination.COST
                break
        else:
            lam *= config.damping_up
            if small_step or lam > config.max_damping:
                reason = Termination.STEP
                break
    return EstimateReport(
        pose=params.to_pose(),
        final_cost=float(f),
        iterations=it,
        converged=reason is not Termination.MAX_ITER,
        termination_reason=reason,
        residual_rms=math.sqrt(f / r.size),
        cost_history=history,
        n_sensors=len(sensors),
    )


def localize(
    readings,
    array: SensorArray,
    spec,
    config: SolverConfig = SolverConfig(),
    starts: list[PoseParams] | None = None,
) -> EstimateReport:
    """Multistart LM; returns the lowest-cost run (ties go to the earliest start)."""
    sensors, r = _prepare(readings, array)
    if starts is None:
        starts = initial_guess(readings, array, spec, config.init_strategy, config.multistart_count)
    best = None
    for k, start in enumerate(starts):
        try:
            rep = lm_solve(start, readings, array, spec, config)
        except SingularityError:
            continue
        rep.start_index = k
        if best is None or rep.final_cost < best.final_cost:
            best = rep
    if best is None:
        pose = starts[0].to_pose()
        best = EstimateReport(pose, math.inf, 0, False, Termination.MAX_ITER, math.inf, degenerate=True)
    if not np.any(r):
        best.degenerate = True
        best.converged = False
    return best
