# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused forward-kinematics / Jacobian kernel for serial chains."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

cnp.import_array()


cdef inline void _mat_mul(double* a, double* b, double* out) noexcept nogil:
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = 0.0
            for k in range(3):
                out[3 * i + j] += a[3 * i + k] * b[3 * k + j]


cdef inline void _mat_vec(double* m, double* v, double* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = m[3 * i] * v[0] + m[3 * i + 1] * v[1] + m[3 * i + 2] * v[2]


cdef inline void _axis_angle_matrix(double ax, double ay, double az, double angle, double* out) noexcept nogil:
    cdef double c = cos(angle)
    cdef double s = sin(angle)
    cdef double t = 1.0 - c
    out[0] = c + t * ax * ax
    out[1] = t * ax * ay - s * az
    out[2] = t * ax * az + s * ay
    out[3] = t * ax * ay + s * az
    out[4] = c + t * ay * ay
    out[5] = t * ay * az - s * ax
    out[6] = t * ax * az - s * ay
    out[7] = t * ay * az + s * ax
    out[8] = c + t * az * az


cdef inline void _quat_matrix(double w, double x, double y, double z, double* out) noexcept nogil:
    out[0] = 1.0 - 2.0 * (y * y + z * z)
    out[1] = 2.0 * (x * y - w * z)
    out[2] = 2.0 * (x * z + w * y)
    out[3] = 2.0 * (x * y + w * z)
    out[4] = 1.0 - 2.0 * (x * x + z * z)
    out[5] = 2.0 * (y * z - w * x)
    out[6] = 2.0 * (x * z - w * y)
    out[7] = 2.0 * (y * z + w * x)
    out[8] = 1.0 - 2.0 * (x * x + y * y)


def chain_fk_jac(double[:, ::1] axes, double[:, ::1] origins, double[:, ::1] rot_offsets,
                 double[::1] tool_t, double[::1] tool_r, double[::1] q):
    """Tool pose and geometric Jacobian; see the pure backend for semantics."""
    cdef int n = q.shape[0]
    cdef cnp.ndarray[double, ndim=1] pos = np.empty(3)
    cdef cnp.ndarray[double, ndim=1] quat = np.empty(4)
    cdef cnp.ndarray[double, ndim=2] jac = np.empty((6, n))
    cdef double[::1] pos_v = pos
    cdef double[::1] quat_v = quat
    cdef double[:, ::1] jac_v = jac

    cdef double R[9]
    cdef double tmp[9]
    cdef double rot[9]
    cdef double p[3]
    cdef double v[3]
    cdef double jp[64][3]
    cdef double jz[64][3]
    cdef int i, k
    cdef double t, s, dx, dy, dz

    if n > 64:
        raise ValueError("kernel supports at most 64 joints")

    for i in range(9):
        R[i] = 0.0
    R[0] = R[4] = R[8] = 1.0
    p[0] = p[1] = p[2] = 0.0

    for i in range(n):
        v[0] = origins[i, 0]
        v[1] = origins[i, 1]
        v[2] = origins[i, 2]
        _mat_vec(R, v, tmp)
        p[0] += tmp[0]
        p[1] += tmp[1]
        p[2] += tmp[2]
        _quat_matrix(rot_offsets[i, 0], rot_offsets[i, 1], rot_offsets[i, 2], rot_offsets[i, 3], rot)
        _mat_mul(R, rot, tmp)
        for k in range(9):
            R[k] = tmp[k]
        jp[i][0] = p[0]
        jp[i][1] = p[1]
        jp[i][2] = p[2]
        v[0] = axes[i, 0]
        v[1] = axes[i, 1]
        v[2] = axes[i, 2]
        _mat_vec(R, v, jz[i])
        _axis_angle_matrix(axes[i, 0], axes[i, 1], axes[i, 2], q[i], rot)
        _mat_mul(R, rot, tmp)
        for k in range(9):
            R[k] = tmp[k]

    v[0] = tool_t[0]
    v[1] = tool_t[1]
    v[2] = tool_t[2]
    _mat_vec(R, v, tmp)
    pos_v[0] = p[0] + tmp[0]
    pos_v[1] = p[1] + tmp[1]
    pos_v[2] = p[2] + tmp[2]
    _quat_matrix(tool_r[0], tool_r[1], tool_r[2], tool_r[3], rot)
    _mat_mul(R, rot, tmp)
    for k in range(9):
        R[k] = tmp[k]

    for i in range(n):
        dx = pos_v[0] - jp[i][0]
        dy = pos_v[1] - jp[i][1]
        dz = pos_v[2] - jp[i][2]
        jac_v[0, i] = jz[i][1] * dz - jz[i][2] * dy
        jac_v[1, i] = jz[i][2] * dx - jz[i][0] * dz
        jac_v[2, i] = jz[i][0] * dy - jz[i][1] * dx
        jac_v[3, i] = jz[i][0]
        jac_v[4, i] = jz[i][1]
        jac_v[5, i] = jz[i][2]

    # Shepperd extraction, sign-normalized so w >= 0.
    t = R[0] + R[4] + R[8]
    if t > 0.0:
        s = sqrt(t + 1.0) * 2.0
        quat_v[0] = 0.25 * s
        quat_v[1] = (R[7] - R[5]) / s
        quat_v[2] = (R[2] - R[6]) / s
        quat_v[3] = (R[3] - R[1]) / s
    elif R[0] >= R[4] and R[0] >= R[8]:
        s = sqrt(1.0 + R[0] - R[4] - R[8]) * 2.0
        quat_v[0] = (R[7] - R[5]) / s
        quat_v[1] = 0.25 * s
        quat_v[2] = (R[1] + R[3]) / s
        quat_v[3] = (R[2] + R[6]) / s
    elif R[4] >= R[8]:
        s = sqrt(1.0 + R[4] - R[0] - R[8]) * 2.0
        quat_v[0] = (R[2] - R[6]) / s
        quat_v[1] = (R[1] + R[3]) / s
        quat_v[2] = 0.25 * s
        quat_v[3] = (R[5] + R[7]) / s
    else:
        s = sqrt(1.0 + R[8] - R[0] - R[4]) * 2.0
        quat_v[0] = (R[3] - R[1]) / s
        quat_v[1] = (R[2] + R[6]) / s
        quat_v[2] = (R[5] + R[7]) / s
        quat_v[3] = 0.25 * s
    if quat_v[0] < 0.0:
        for k in range(4):
            quat_v[k] = -quat_v[k]
    t = sqrt(quat_v[0] ** 2 + quat_v[1] ** 2 + quat_v[2] ** 2 + quat_v[3] ** 2)
    for k in range(4):
        quat_v[k] /= t

    return pos, quat, jac
