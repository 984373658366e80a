import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magloc.field_model import (
    MU_0,
    MagnetPose,
    MagnetSpec,
    SingularityError,
    dipole_strength,
    flux_array,
    flux_at,
    flux_jacobian,
)

BT = 5.0265e-10


def expanded_components(bt, magnet, h, sensor):
    """Term-by-term scalar evaluation of the three expanded flux components."""
    a, b, c = magnet
    m, n, p = h
    x, y, z = sensor
    R = math.sqrt((x - a) ** 2 + (y - b) ** 2 + (z - c) ** 2)
    dot = m * (x - a) + n * (y - b) + p * (z - c)
    return (
        bt * (3 * dot * (x - a) / R**5 - m / R**3),
        bt * (3 * dot * (y - b) / R**5 - n / R**3),
        bt * (3 * dot * (z - c) / R**5 - p / R**3),
    )


def rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


class TestDipoleStrength:
    def test_unit_construction(self):
        M0 = 1 / (1e-7 * math.pi * (1e-3) ** 2 * 2e-3)
        spec = MagnetSpec(length_L=2e-3, radius_r=1e-3, magnetization_M0=M0, mu_r=1.0)
        assert dipole_strength(spec) == pytest.approx(1.0, rel=1e-12)

    def test_default_magnet(self):
        spec = MagnetSpec(length_L=2e-3, radius_r=1e-3, magnetization_M0=8e5)
        assert dipole_strength(spec) == pytest.approx(5.0265e-10, rel=1e-4)
        assert spec.mu_0 == MU_0

    def test_linear_in_length(self):
        a = MagnetSpec(length_L=2e-3)
        b = MagnetSpec(length_L=4e-3)
        assert dipole_strength(b) == 2 * dipole_strength(a)

    @pytest.mark.parametrize("field", ["length_L", "radius_r", "magnetization_M0", "mu_r"])
    @pytest.mark.parametrize("value", [0.0, -1.0, float("nan")])
    def test_rejects_non_positive(self, field, value):
        with pytest.raises(ValueError):
            MagnetSpec(**{field: value})


class TestFluxAt:
    origin_z = MagnetPose([0, 0, 0], [0, 0, 1])

    def test_on_axis(self):
        R = 0.05
        np.testing.assert_allclose(flux_at(self.origin_z, BT, [0, 0, R]), [0, 0, 2 * BT / R**3], rtol=1e-14)

    def test_equatorial(self):
        R = 0.05
        np.testing.assert_allclose(flux_at(self.origin_z, BT, [R, 0, 0]), [0, 0, -BT / R**3], rtol=1e-14, atol=0)

    def test_off_axis_matches_expanded_components(self):
        # frozen from expanded_components()
        expected = [9.872978432317166e-06, 0.0, 3.2909928107723876e-06]
        np.testing.assert_allclose(flux_at(self.origin_z, BT, [0.03, 0, 0.03]), expected, rtol=1e-13)
        np.testing.assert_allclose(expanded_components(BT, (0, 0, 0), (0, 0, 1), (0.03, 0, 0.03)), expected, rtol=1e-15)

    def test_singularity(self):
        with pytest.raises(SingularityError):
            flux_at(self.origin_z, BT, [0, 0, 5e-7])
        with pytest.raises(SingularityError):
            flux_at(self.origin_z, BT, [0, 0, 1e-3], eps=1e-2)

    def test_spec_and_strength_agree(self, spec):
        np.testing.assert_array_equal(
            flux_at(self.origin_z, spec, [0.01, 0.02, 0.03]),
            flux_at(self.origin_z, dipole_strength(spec), [0.01, 0.02, 0.03]),
        )

    def test_pose_requires_unit_orientation(self):
        with pytest.raises(ValueError):
            MagnetPose([0, 0, 0], [0, 0, 2])
        assert np.allclose(MagnetPose.normalized([0, 0, 0], [0, 0, 2]).orientation, [0, 0, 1])


def _random_config(rng):
    pos = rng.uniform(-0.1, 0.1, 3)
    h = rng.standard_normal(3)
    h /= np.linalg.norm(h)
    sensor = pos + rng.standard_normal(3) * 0.05
    return MagnetPose(pos, h), sensor


def test_vector_form_matches_expanded_components():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        pose, sensor = _random_config(rng)
        got = flux_at(pose, BT, sensor)
        ref = np.array(expanded_components(BT, pose.position, pose.orientation, sensor))
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    assert worst < 1e-12


def test_inverse_cube_decay():
    rng = np.random.default_rng(12)
    for _ in range(200):
        pose, sensor = _random_config(rng)
        ray = sensor - pose.position
        near = np.linalg.norm(flux_at(pose, BT, pose.position + ray))
        far = np.linalg.norm(flux_at(pose, BT, pose.position + 2 * ray))
        assert far * 8 == pytest.approx(near, rel=1e-12)


def test_odd_in_orientation():
    rng = np.random.default_rng(13)
    for _ in range(200):
        pose, sensor = _random_config(rng)
        flipped = MagnetPose(pose.position, -pose.orientation)
        np.testing.assert_array_equal(flux_at(flipped, BT, sensor), -flux_at(pose, BT, sensor))


def test_rotation_equivariance():
    rng = np.random.default_rng(14)
    for _ in range(200):
        pose, sensor = _random_config(rng)
        Q = rotation(rng)
        rotated = MagnetPose(pose.position, Q @ pose.orientation)
        s_rot = pose.position + Q @ (sensor - pose.position)
        lhs = flux_at(rotated, BT, s_rot)
        rhs = Q @ flux_at(pose, BT, sensor)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def central_difference_jacobian(pose, bt, sensor, rel_step=1e-7):
    """Central differences of flux_at over (a, b, c, m, n, p), orientation unconstrained."""
    from magloc._pykernels import flux

    x0 = pose.as_vector()
    J = np.empty((3, 6))
    for j in range(6):
        scale = np.linalg.norm(sensor - pose.position) if j < 3 else 1.0
        h = rel_step * scale
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        fp = flux(np.atleast_2d(sensor), xp[:3], xp[3:], bt, 1e-6)[0]
        fm = flux(np.atleast_2d(sensor), xm[:3], xm[3:], bt, 1e-6)[0]
        J[:, j] = (fp - fm) / (2 * h)
    return J


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(15)
    for _ in range(300):
        pose, sensor = _random_config(rng)
        J = flux_jacobian(pose, BT, sensor)
        Jfd = central_difference_jacobian(pose, BT, sensor)
        err = np.abs(J - Jfd).max() / np.abs(Jfd).max()
        assert err < 1e-5


def test_jacobian_orientation_columns_independent_of_orientation():
    rng = np.random.default_rng(16)
    pose, sensor = _random_config(rng)
    other = MagnetPose(pose.position, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(flux_jacobian(pose, BT, sensor)[:, 3:], flux_jacobian(other, BT, sensor)[:, 3:], rtol=1e-15)


def test_jacobian_scales_with_strength():
    rng = np.random.default_rng(17)
    pose, sensor = _random_config(rng)
    np.testing.assert_allclose(flux_jacobian(pose, 3 * BT, sensor), 3 * flux_jacobian(pose, BT, sensor), rtol=1e-14)


def test_jacobian_singularity():
    with pytest.raises(SingularityError):
        flux_jacobian(MagnetPose([0, 0, 0]), BT, [0, 0, 0])


def discretized_cylinder_field(spec, pose_axis, sensors, nr=20, nphi=40, nz=20):
    """Sum of elemental dipoles over a uniformly magnetized cylinder (axis along z at origin)."""
    a, L = spec.radius_r, spec.length_L
    dr, dphi, dz = a / nr, 2 * math.pi / nphi, L / nz
    r = (np.arange(nr) + 0.5) * dr
    phi = (np.arange(nphi) + 0.5) * dphi
    z = -L / 2 + (np.arange(nz) + 0.5) * dz
    R, PHI, Z = np.meshgrid(r, phi, z, indexing="ij")
    pts = np.column_stack([(R * np.cos(PHI)).ravel(), (R * np.sin(PHI)).ravel(), Z.ravel()])
    # exact annular-sector volumes, so the total equals pi a^2 L
    dV = ((((R + dr / 2) ** 2 - (R - dr / 2) ** 2) / 2) * dphi * dz).ravel()
    moment = spec.mu_r * spec.magnetization_M0 * dV
    out = np.zeros((len(sensors), 3))
    m_hat = np.asarray(pose_axis, float)
    for k, s in enumerate(sensors):
        P = s - pts
        Rn = np.linalg.norm(P, axis=1)
        mP = P @ m_hat
        B = (3 * (mP / Rn**5)[:, None] * P - m_hat / (Rn**3)[:, None]) * moment[:, None]
        out[k] = spec.mu_0 / (4 * math.pi) * B.sum(axis=0)
    return out, len(pts)


def random_far_points(rng, n, rmin=0.03, rmax=0.2):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(rmin, rmax, (n, 1))


def test_dipole_approximation_of_cylinder(spec):
    rng = np.random.default_rng(18)
    sensors = random_far_points(rng, 30)
    ref, n_el = discretized_cylinder_field(spec, [0, 0, 1], sensors)
    assert n_el >= 10_000
    got = flux_array(MagnetPose([0, 0, 0], [0, 0, 1]), spec, sensors)
    rel = np.abs(np.linalg.norm(got, axis=1) / np.linalg.norm(ref, axis=1) - 1)
    assert rel.max() < 0.01


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-0.2, 0.2), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
)
def test_flux_finite(offset, h):
    offset = np.array(offset)
    if np.linalg.norm(offset) < 1e-3:
        offset = offset + 0.01
    pose = MagnetPose.normalized([0, 0, 0], h)
    assert np.all(np.isfinite(flux_at(pose, BT, offset)))
