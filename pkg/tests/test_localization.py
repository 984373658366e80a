import math

import numpy as np
import pytest
from scipy.stats import spearmanr

import magloc.localization as loc
from magloc import _pykernels
from magloc.field_model import MagnetPose, dipole_strength, flux_array
from magloc.localization import (
    InitStrategy,
    PoseParams,
    SolverConfig,
    Termination,
    height_heuristic,
    hemisphere_directions,
    initial_guess,
    lm_solve,
    localize,
    objective,
    objective_components,
    residuals_and_jacobian,
)
from magloc.measurement import UT, ReadingSet, SensorModel, simulate_readings
from magloc.metrics import orientation_angle, position_error
from magloc.sensor_array import SensorArray, paper_layouts

from conftest import random_pose


def noiseless(array, pose, spec):
    return ReadingSet(flux_array(pose, spec, array.sensors))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(damping_up=0.5)
    with pytest.raises(ValueError):
        SolverConfig(damping_down=1.5)
    with pytest.raises(ValueError):
        SolverConfig(step_tol=0)
    assert SolverConfig(init_strategy="grid").init_strategy is InitStrategy.GRID


class TestPoseParams:
    def test_spherical_formula(self):
        p = PoseParams(np.zeros(3), 0.7, -1.2)
        st, ct = math.sin(0.7), math.cos(0.7)
        np.testing.assert_allclose(p.orientation(), [st * math.cos(-1.2), st * math.sin(-1.2), ct], rtol=1e-15)

    @pytest.mark.parametrize("h", [[0, 0, 1], [0, 0, -1], [1, 0, 0], [0.3, -0.2, 0.9], [1e-5, 0, 1]])
    def test_round_trip(self, h):
        pose = MagnetPose.normalized([0.01, 0.02, 0.03], h)
        p = PoseParams.from_pose(pose)
        np.testing.assert_allclose(p.orientation(), pose.orientation, atol=1e-15)
        assert math.sin(p.theta) >= loc.GIMBAL_SIN

    def test_unit_norm_by_construction(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            frame = loc._anchor_frame(rng.standard_normal(3))
            p = PoseParams(np.zeros(3), rng.uniform(-10, 10), rng.uniform(-10, 10), frame)
            assert abs(np.linalg.norm(p.orientation()) - 1) < 1e-12

    def test_reanchor_preserves_pose(self):
        p = PoseParams(np.array([0.0, 0.0, 0.05]), 1e-4, 0.3)
        q = p.reanchored()
        np.testing.assert_allclose(q.orientation(), p.orientation(), atol=1e-15)
        assert q.theta == math.pi / 2

    def test_orientation_derivative(self):
        p = PoseParams(np.zeros(3), 0.9, 0.4, loc._anchor_frame(np.array([0.2, 0.5, -0.3])))
        h = 1e-7
        for j, (dt, dp) in enumerate([(h, 0), (0, h)]):
            plus = PoseParams(p.position, p.theta + dt, p.phi + dp, p.frame).orientation()
            minus = PoseParams(p.position, p.theta - dt, p.phi - dp, p.frame).orientation()
            np.testing.assert_allclose(p.orientation_derivative()[:, j], (plus - minus) / (2 * h), atol=1e-8)


class TestObjective:
    def test_zero_at_truth(self, array20, spec):
        pose = MagnetPose.normalized([0.01, -0.02, 0.05], [0.2, 0.1, 1])
        assert objective(PoseParams.from_pose(pose), noiseless(array20, pose, spec), array20, spec) == pytest.approx(0, abs=1e-40)

    def test_single_sensor_one_microtesla(self):
        R = 0.05
        bt = 1e-6 * R**3
        pose = MagnetPose([0, 0, 0], [-1, 0, 0])
        array = SensorArray([[0.0, R, 0.0]])
        E = objective(PoseParams.from_pose(pose), ReadingSet(np.zeros((1, 3))), array, bt)
        assert E == pytest.approx(1e-12, rel=1e-12)

    def test_decomposes_by_axis(self, array20, spec):
        rng = np.random.default_rng(1)
        readings = ReadingSet(rng.normal(0, 1e-6, (20, 3)))
        params = PoseParams(np.array([0.0, 0.01, 0.04]), 0.5, 0.5)
        ex, ey, ez = objective_components(params, readings, array20, spec)
        model = flux_array(params.to_pose(), spec, array20.sensors)
        d = readings.readings - model
        assert (ex, ey, ez) == pytest.approx(tuple((d**2).sum(axis=0)), rel=1e-13)
        assert ex + ey + ez == pytest.approx(objective(params, readings, array20, spec), rel=1e-13)

    def test_count_mismatch(self, array20, spec):
        with pytest.raises(ValueError):
            objective(PoseParams(np.zeros(3) + 0.05, 1, 1), ReadingSet(np.zeros((3, 3))), array20, spec)


def central_difference_residuals(params, readings, array, bt, rel=1e-7):
    """Finite differences of (model - measured) using the numpy forward model only."""
    def res(x):
        p = PoseParams.from_vector(x, params.frame)
        h = p.orientation()
        return (_pykernels.flux(array.sensors, p.position, h, bt, 1e-6) - readings.readings).ravel()

    x0 = params.vector
    scale = np.linalg.norm(array.sensors - params.position, axis=1).mean()
    J = np.empty((3 * len(array), 5))
    for j in range(5):
        h = rel * (scale if j < 3 else 1.0)
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (res(xp) - res(xm)) / (2 * h)
    return J


def test_residual_jacobian_matches_finite_differences(array20, spec):
    rng = np.random.default_rng(2)
    bt = dipole_strength(spec)
    for _ in range(100):
        truth = random_pose(rng)
        readings = ReadingSet(flux_array(truth, spec, array20.sensors) + rng.normal(0, 1e-6, (20, 3)))
        params = PoseParams(truth.position + rng.normal(0, 0.005, 3), rng.uniform(0.1, 3.0), rng.uniform(-3, 3),
                            loc._anchor_frame(rng.standard_normal(3)))
        r, J = residuals_and_jacobian(params, readings, array20, spec)
        Jfd = central_difference_residuals(params, readings, array20, bt)
        assert r.shape == (60,) and J.shape == (60, 5)
        assert np.abs(J - Jfd).max() / np.abs(Jfd).max() < 1e-5


def test_residuals_zero_and_consistent(array20, spec):
    pose = MagnetPose.normalized([0.0, 0.0, 0.05], [0, 1, 1])
    params = PoseParams.from_pose(pose)
    r, _ = residuals_and_jacobian(params, noiseless(array20, pose, spec), array20, spec)
    assert np.abs(r).max() < 1e-20
    readings = ReadingSet(np.ones((20, 3)) * 1e-6)
    r, _ = residuals_and_jacobian(params, readings, array20, spec)
    assert r @ r == pytest.approx(objective(params, readings, array20, spec), rel=1e-13)
    np.testing.assert_allclose(r[:3], flux_array(pose, spec, array20.sensors[:1])[0] - 1e-6)


class TestInitialGuess:
    def test_height_heuristic_single_sensor(self, spec):
        bt = dipole_strength(spec)
        R = 0.04
        array = SensorArray([[0.0, 0.0, 0.0]])
        readings = noiseless(array, MagnetPose([0, 0, R], [0, 0, 1]), spec)
        mag = np.linalg.norm(readings.readings[0])
        assert height_heuristic(mag, bt) == pytest.approx((2 * bt / mag) ** (1 / 3))
        assert height_heuristic(mag, bt) == pytest.approx(R, rel=1e-12)
        starts = initial_guess(readings, array, spec, "centroid", 8)
        assert len(starts) == 8
        for s in starts:
            np.testing.assert_allclose(s.position, [0, 0, R], rtol=1e-12)

    def test_symmetric_centroid(self, array20, spec):
        readings = noiseless(array20, MagnetPose([0, 0, 0.05], [0, 0, 1]), spec)
        starts = initial_guess(readings, array20, spec, "centroid")
        assert np.abs(starts[0].position[:2]).max() < 1e-6

    def test_hemisphere_seeds(self):
        d = hemisphere_directions(8)
        assert d.shape == (8, 3)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1, rtol=1e-15)
        assert np.all(d[:, 2] >= 0)
        assert len({tuple(np.round(v, 6)) for v in d}) == 8

    def test_grid_sorted(self, array20, spec):
        readings = noiseless(array20, MagnetPose.normalized([0.02, 0.01, 0.07], [1, 0, 1]), spec)
        starts = initial_guess(readings, array20, spec, "grid", 8)
        assert len(starts) <= 8
        costs = [objective(s, readings, array20, spec) for s in starts]
        assert costs == sorted(costs)

    def test_all_saturated(self, array20, spec):
        rs = ReadingSet(np.zeros((20, 3)), np.ones(20, bool))
        with pytest.raises(ValueError, match="saturated"):
            initial_guess(rs, array20, spec)


class TestLMSolve:
    def test_start_at_truth(self, array20, spec):
        truth = MagnetPose.normalized([0.01, 0.0, 0.06], [0.3, -0.4, 0.8])
        rep = lm_solve(PoseParams.from_pose(truth), noiseless(array20, truth, spec), array20, spec)
        assert rep.converged and rep.iterations <= 2 and rep.final_cost < 1e-30

    def test_corner_pose_from_initial_guess(self, array20, spec):
        truth = MagnetPose([0.06, 0.045, 0.03], [0, 0, 1])
        readings = noiseless(array20, truth, spec)
        reps = [lm_solve(s, readings, array20, spec) for s in initial_guess(readings, array20, spec)]
        best = min(reps, key=lambda r: r.final_cost)
        assert position_error(best.pose, truth) < 1e-6
        assert orientation_angle(best.pose, truth) < 1e-6

    def test_accepted_costs_non_increasing(self, array20, spec):
        rng = np.random.default_rng(3)
        for _ in range(20):
            truth = random_pose(rng)
            readings = simulate_readings(array20, truth, spec, SensorModel(noise_sigma=1 * UT), seed=int(rng.integers(1 << 30)))
            for s in initial_guess(readings, array20, spec, count=3):
                hist = lm_solve(s, readings, array20, spec).cost_history
                assert all(b <= a for a, b in zip(hist, hist[1:]))

    def test_max_iter_report(self, array20, spec):
        truth = MagnetPose([0.0, 0.0, 0.05], [0, 0, 1])
        readings = noiseless(array20, truth, spec)
        start = PoseParams(np.array([0.05, -0.04, 0.12]), 2.0, 1.0)
        rep = lm_solve(start, readings, array20, spec, SolverConfig(max_iterations=1))
        assert rep.iterations == 1 and not rep.converged
        assert rep.termination_reason is Termination.MAX_ITER

    def test_unit_orientation_returned(self, array20, spec):
        truth = MagnetPose.normalized([0.0, 0.0, 0.05], [1, 1, 0.1])
        rep = lm_solve(PoseParams(np.array([0, 0, 0.06]), 1.0, 0.0), noiseless(array20, truth, spec), array20, spec)
        assert abs(np.linalg.norm(rep.pose.orientation) - 1) < 1e-12

    def test_through_the_pole(self, array20, spec):
        # start near +z with the identity frame and converge to a nearly-vertical truth on the other side
        truth = MagnetPose.normalized([0.0, 0.0, 0.05], [-1e-4, 0, 1])
        start = PoseParams(np.array([0.0, 0.0, 0.05]), 0.2, 0.0)
        rep = lm_solve(start, noiseless(array20, truth, spec), array20, spec)
        assert orientation_angle(rep.pose, truth) < 1e-6

    def test_saturated_sensors_dropped(self, array20, spec):
        truth = MagnetPose([0.0, 0.0, 0.05], [0, 0, 1])
        rs = noiseless(array20, truth, spec)
        sat = np.zeros(20, bool)
        sat[0] = True
        garbage = rs.readings.copy()
        garbage[0] = 1.0
        rep = localize(ReadingSet(garbage, sat), array20, spec)
        assert rep.n_sensors == 19
        assert position_error(rep.pose, truth) < 1e-6


class TestLocalize:
    def test_centered_noiseless(self, array20, spec):
        truth = MagnetPose([0.0, 0.0, 0.05], [0, 0, 1])
        rep = localize(noiseless(array20, truth, spec), array20, spec)
        assert rep.converged and position_error(rep.pose, truth) < 1e-6

    def test_zero_readings_flagged(self, array20, spec):
        rep = localize(ReadingSet(np.zeros((20, 3))), array20, spec)
        assert rep.degenerate and not rep.converged

    def test_best_of_starts(self, array20, spec):
        truth = MagnetPose.normalized([0.02, -0.01, 0.04], [0, 1, 1])
        readings = noiseless(array20, truth, spec)
        good = PoseParams.from_pose(truth)
        bad = PoseParams(np.array([-0.2, 0.2, 0.2]), 2.5, 2.0)
        rep = localize(readings, array20, spec, starts=[bad, good])
        ref = lm_solve(good, readings, array20, spec)
        assert rep.start_index == 1
        assert rep.final_cost == ref.final_cost
        np.testing.assert_array_equal(rep.pose.position, ref.pose.position)

    def test_ties_go_to_first(self, array20, spec):
        truth = MagnetPose([0.0, 0.0, 0.05], [0, 0, 1])
        readings = noiseless(array20, truth, spec)
        s = PoseParams.from_pose(truth)
        assert localize(readings, array20, spec, starts=[s, s, s]).start_index == 0

    def test_grid_strategy(self, array20, spec):
        truth = MagnetPose.normalized([0.03, 0.02, 0.08], [1, 0, -1])
        rep = localize(noiseless(array20, truth, spec), array20, spec, SolverConfig(init_strategy="grid"))
        assert position_error(rep.pose, truth) < 1e-6

    def test_deterministic(self, array20, spec):
        truth = MagnetPose.normalized([0.0, 0.01, 0.05], [0, 1, 1])
        readings = simulate_readings(array20, truth, spec, SensorModel(noise_sigma=1 * UT), seed=5)
        a, b = localize(readings, array20, spec), localize(readings, array20, spec)
        assert a.pose.position.tobytes() == b.pose.position.tobytes()

    def test_backends_give_same_estimate(self, array20, spec, monkeypatch):
        truth = MagnetPose.normalized([0.0, 0.01, 0.05], [0, 1, 1])
        readings = simulate_readings(array20, truth, spec, SensorModel(noise_sigma=1 * UT), seed=5)
        a = localize(readings, array20, spec)
        monkeypatch.setattr(loc, "kernels", _pykernels)
        b = localize(readings, array20, spec)
        np.testing.assert_allclose(a.pose.position, b.pose.position, atol=1e-9)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_noiseless_identifiability(m, spec):
    array = paper_layouts(m, "four_by_m")
    half = np.ptp(array.sensors, axis=0) / 2
    rng = np.random.default_rng(100 + m)
    for _ in range(25):
        truth = random_pose(rng, lateral=(half[0], half[1]))
        rep = localize(noiseless(array, truth, spec), array, spec)
        assert position_error(rep.pose, truth) < 1e-6
        assert orientation_angle(rep.pose, truth) < 1e-5
        assert abs(np.linalg.norm(rep.pose.orientation) - 1) < 1e-12
        # the flux is odd in the axis, so the sign is recovered
        assert rep.pose.orientation @ truth.orientation > 0


@pytest.mark.slow
def test_rmse_grows_with_noise(array20, spec):
    sigmas = [0.1, 0.5, 1.0, 2.0, 5.0]
    truth = MagnetPose.normalized([0.01, -0.01, 0.05], [0.2, 0.1, 1])
    rmse = []
    for s in sigmas:
        model = SensorModel(noise_sigma=s * UT)
        errs = [position_error(localize(simulate_readings(array20, truth, spec, model, seed=k), array20, spec).pose, truth)
                for k in range(60)]
        rmse.append(math.sqrt(np.mean(np.square(errs))))
    rho = spearmanr(sigmas, rmse)[0]
    assert rho > 0.9, rmse
