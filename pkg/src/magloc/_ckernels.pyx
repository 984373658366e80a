# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dipole kernels. Same signatures and semantics as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline double _check(double R2, double eps, Py_ssize_t l) except -1.0:
    if R2 < eps * eps:
        raise ValueError(
            f"sensor {l} lies within {eps:g} m of the magnet (R={sqrt(R2):.3e} m)"
        )
    return R2


def flux(const double[:, ::1] sensors, const double[::1] position,
         const double[::1] orientation, double bt, double eps):
    cdef Py_ssize_t N = sensors.shape[0], l, i
    cdef double P[3]
    cdef double R2, inv_r3, inv_r5, hP
    out = np.empty((N, 3))
    cdef double[:, ::1] B = out
    for l in range(N):
        for i in range(3):
            P[i] = sensors[l, i] - position[i]
        R2 = _check(P[0] * P[0] + P[1] * P[1] + P[2] * P[2], eps, l)
        inv_r3 = 1.0 / (R2 * sqrt(R2))
        inv_r5 = inv_r3 / R2
        hP = orientation[0] * P[0] + orientation[1] * P[1] + orientation[2] * P[2]
        for i in range(3):
            B[l, i] = bt * (3.0 * hP * P[i] * inv_r5 - orientation[i] * inv_r3)
    return out


cdef inline void _jac6(const double* P, const double* h, double R2, double bt,
                       double[3][6] J) noexcept nogil:
    cdef double inv_r3 = 1.0 / (R2 * sqrt(R2))
    cdef double inv_r5 = inv_r3 / R2
    cdef double inv_r7 = inv_r5 / R2
    cdef double hP = h[0] * P[0] + h[1] * P[1] + h[2] * P[2]
    cdef int i, j
    cdef double d
    for i in range(3):
        for j in range(3):
            d = 3.0 * (P[i] * h[j] + h[i] * P[j]) * inv_r5 - 15.0 * hP * P[i] * P[j] * inv_r7
            if i == j:
                d += 3.0 * hP * inv_r5
            J[i][j] = -bt * d
            d = 3.0 * P[i] * P[j] * inv_r5
            if i == j:
                d -= inv_r3
            J[i][3 + j] = bt * d


def flux_jacobian(const double[:, ::1] sensors, const double[::1] position,
                  const double[::1] orientation, double bt, double eps):
    cdef Py_ssize_t N = sensors.shape[0], l
    cdef int i, j
    cdef double P[3]
    cdef double h[3]
    cdef double J[3][6]
    cdef double R2
    out = np.empty((N, 3, 6))
    cdef double[:, :, ::1] O = out
    for i in range(3):
        h[i] = orientation[i]
    for l in range(N):
        for i in range(3):
            P[i] = sensors[l, i] - position[i]
        R2 = _check(P[0] * P[0] + P[1] * P[1] + P[2] * P[2], eps, l)
        _jac6(P, h, R2, bt, J)
        for i in range(3):
            for j in range(6):
                O[l, i, j] = J[i][j]
    return out


cdef int _rows(const double[:, ::1] sensors, const double[:, ::1] readings,
               const double[::1] position, const double[::1] orientation,
               const double[:, ::1] dh, double bt, double eps, Py_ssize_t l,
               double* r, double[3][5] row) except -1:
    cdef int i, j
    cdef double P[3]
    cdef double h[3]
    cdef double J[3][6]
    cdef double R2, inv_r3, inv_r5, hP
    for i in range(3):
        P[i] = sensors[l, i] - position[i]
        h[i] = orientation[i]
    R2 = _check(P[0] * P[0] + P[1] * P[1] + P[2] * P[2], eps, l)
    inv_r3 = 1.0 / (R2 * sqrt(R2))
    inv_r5 = inv_r3 / R2
    hP = h[0] * P[0] + h[1] * P[1] + h[2] * P[2]
    _jac6(P, h, R2, bt, J)
    for i in range(3):
        r[i] = bt * (3.0 * hP * P[i] * inv_r5 - h[i] * inv_r3) - readings[l, i]
        for j in range(3):
            row[i][j] = J[i][j]
        for j in range(2):
            row[i][3 + j] = J[i][3] * dh[0, j] + J[i][4] * dh[1, j] + J[i][5] * dh[2, j]
    return 0


def residuals_jacobian(const double[:, ::1] sensors, const double[:, ::1] readings,
                       const double[::1] position, const double[::1] orientation,
                       const double[:, ::1] dh, double bt, double eps):
    cdef Py_ssize_t N = sensors.shape[0], l
    cdef int i, j
    cdef double r[3]
    cdef double row[3][5]
    res = np.empty(3 * N)
    jac = np.empty((3 * N, 5))
    cdef double[::1] R = res
    cdef double[:, ::1] Jm = jac
    for l in range(N):
        _rows(sensors, readings, position, orientation, dh, bt, eps, l, r, row)
        for i in range(3):
            R[3 * l + i] = r[i]
            for j in range(5):
                Jm[3 * l + i, j] = row[i][j]
    return res, jac


def normal_equations(const double[:, ::1] sensors, const double[:, ::1] readings,
                     const double[::1] position, const double[::1] orientation,
                     const double[:, ::1] dh, double bt, double eps):
    cdef Py_ssize_t N = sensors.shape[0], l
    cdef int i, j, k
    cdef double r[3]
    cdef double row[3][5]
    cdef double c = 0.0
    A = np.zeros((5, 5))
    g = np.zeros(5)
    cdef double[:, ::1] Am = A
    cdef double[::1] gm = g
    for l in range(N):
        _rows(sensors, readings, position, orientation, dh, bt, eps, l, r, row)
        for i in range(3):
            c += r[i] * r[i]
            for j in range(5):
                gm[j] += row[i][j] * r[i]
                for k in range(j, 5):
                    Am[j, k] += row[i][j] * row[i][k]
    for j in range(5):
        for k in range(j):
            Am[j, k] = Am[k, j]
    return A, g, c


def cost(const double[:, ::1] sensors, const double[:, ::1] readings,
         const double[::1] position, const double[::1] orientation,
         double bt, double eps):
    cdef Py_ssize_t N = sensors.shape[0], l
    cdef int i
    cdef double P[3]
    cdef double R2, inv_r3, inv_r5, hP, d
    cdef double c = 0.0
    for l in range(N):
        for i in range(3):
            P[i] = sensors[l, i] - position[i]
        R2 = _check(P[0] * P[0] + P[1] * P[1] + P[2] * P[2], eps, l)
        inv_r3 = 1.0 / (R2 * sqrt(R2))
        inv_r5 = inv_r3 / R2
        hP = orientation[0] * P[0] + orientation[1] * P[1] + orientation[2] * P[2]
        for i in range(3):
            d = bt * (3.0 * hP * P[i] * inv_r5 - orientation[i] * inv_r3) - readings[l, i]
            c += d * d
    return c
