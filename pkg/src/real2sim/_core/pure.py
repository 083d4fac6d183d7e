"""Numpy fallback for the fused forward-kinematics / Jacobian kernel."""

from __future__ import annotations

import numpy as np


def _axis_angle_matrix(axis, angle):
    """Rotation matrix about a unit axis (Rodrigues form)."""
    c = np.cos(angle)
    s = np.sin(angle)
    ax, ay, az = axis
    cross = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(axis, axis)


def _quat_matrix(quat):
    """Rotation matrix from a unit quaternion (w, x, y, z)."""
    w, x, y, z = quat
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_quat(R):
    """Unit quaternion (w, x, y, z) from a rotation matrix, w >= 0."""
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def chain_fk_jac(axes, origins, rot_offsets, tool_t, tool_r, q):
    """Tool pose and geometric Jacobian of a serial revolute chain.

    Frame recursion per joint i: translate by origins[i], rotate by the fixed
    offset rot_offsets[i] (unit quaternion), then rotate by q[i] about
    axes[i].  The tool transform (tool_t, tool_r) is appended after the last
    joint.  Returns (position (3,), orientation quaternion (4,) with w >= 0,
    jacobian (6, n)) where column i is (z_i x (p_tool - o_i), z_i).
    """
    n = q.shape[0]
    R = np.eye(3)
    p = np.zeros(3)
    joint_pos = np.empty((n, 3))
    joint_axis = np.empty((n, 3))
    for i in range(n):
        p = p + R @ origins[i]
        R = R @ _quat_matrix(rot_offsets[i])
        joint_pos[i] = p
        joint_axis[i] = R @ axes[i]
        R = R @ _axis_angle_matrix(axes[i], q[i])
    pos = p + R @ tool_t
    R = R @ _quat_matrix(tool_r)

    jac = np.empty((6, n))
    for i in range(n):
        jac[:3, i] = np.cross(joint_axis[i], pos - joint_pos[i])
        jac[3:, i] = joint_axis[i]
    return pos, _matrix_quat(R), jac
