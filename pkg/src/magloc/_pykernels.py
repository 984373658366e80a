"""Pure numpy implementations of the dipole kernels.

These mirror ``magloc._ckernels`` one-for-one and are used whenever the
compiled extension is unavailable (or ``MAGLOC_PURE_PYTHON=1`` is set).

Array conventions shared by both backends:

* ``sensors``: (N, 3) float64 sensor positions
* ``readings``: (N, 3) float64 measured flux
* ``position``, ``orientation``: (3,) float64
* ``dh``: (3, 2) float64, derivative of the orientation vector with respect
  to the two angle parameters
"""

import numpy as np


def _offsets(sensors, position, eps):
    P = sensors - position
    R2 = np.einsum("ij,ij->i", P, P)
    if R2.min() < eps * eps:
        l = int(np.argmin(R2))
        raise ValueError(
            f"sensor {l} lies within {eps:g} m of the magnet (R={np.sqrt(R2[l]):.3e} m)"
        )
    return P, R2


def flux(sensors, position, orientation, bt, eps):
    P, R2 = _offsets(sensors, position, eps)
    inv_r3 = R2 ** -1.5
    inv_r5 = inv_r3 / R2
    hP = P @ orientation
    return bt * (3.0 * (hP * inv_r5)[:, None] * P - inv_r3[:, None] * orientation)


def flux_jacobian(sensors, position, orientation, bt, eps):
    """(N, 3, 6) derivatives of each flux component w.r.t. (a, b, c, m, n, p)."""
    P, R2 = _offsets(sensors, position, eps)
    h = orientation
    inv_r3 = R2 ** -1.5
    inv_r5 = inv_r3 / R2
    inv_r7 = inv_r5 / R2
    hP = P @ h
    eye = np.eye(3)
    # dB_i/dP_j
    dP = 3.0 * (
        P[:, :, None] * h[None, None, :]
        + hP[:, None, None] * eye
        + h[None, :, None] * P[:, None, :]
    ) * inv_r5[:, None, None] - 15.0 * (hP * inv_r7)[:, None, None] * (
        P[:, :, None] * P[:, None, :]
    )
    dh = 3.0 * P[:, :, None] * P[:, None, :] * inv_r5[:, None, None] - eye * inv_r3[:, None, None]
    out = np.empty((len(sensors), 3, 6))
    out[:, :, :3] = -bt * dP
    out[:, :, 3:] = bt * dh
    return out


def residuals_jacobian(sensors, readings, position, orientation, dh, bt, eps):
    J6 = flux_jacobian(sensors, position, orientation, bt, eps)
    r = (flux(sensors, position, orientation, bt, eps) - readings).reshape(-1)
    J = np.empty((3 * len(sensors), 5))
    J[:, :3] = J6[:, :, :3].reshape(-1, 3)
    J[:, 3:] = (J6[:, :, 3:] @ dh).reshape(-1, 2)
    return r, J


def normal_equations(sensors, readings, position, orientation, dh, bt, eps):
    r, J = residuals_jacobian(sensors, readings, position, orientation, dh, bt, eps)
    return J.T @ J, J.T @ r, float(r @ r)


def cost(sensors, readings, position, orientation, bt, eps):
    r = flux(sensors, position, orientation, bt, eps) - readings
    return float(np.einsum("ij,ij->", r, r))
