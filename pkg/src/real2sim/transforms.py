"""Quaternion and rigid-pose helpers (quaternions stored as w, x, y, z)."""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    """Unit quaternion with non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    return -q if q[0] < 0.0 else q


def quat_mul(a, b):
    """Hamilton product a * b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate vector v by quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * np.asarray(v, dtype=float))


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    return quat_normalize(np.concatenate(([np.cos(half)], np.sin(half) * axis / n)))


def quat_angle(q):
    """Rotation angle of a unit quaternion, in [0, pi]."""
    w = min(1.0, max(-1.0, abs(float(q[0]))))
    return 2.0 * np.arccos(w)


def orientation_error(q, q_d):
    """Rotation vector taking q_d to q: 2 * vector part of q * conj(q_d).

    Small-angle approximation of the axis-angle error used by the Cartesian
    stiffness term; exact direction, magnitude 2*sin(theta/2).
    """
    e = quat_mul(q, quat_conj(q_d))
    if e[0] < 0.0:
        e = -e
    return 2.0 * e[1:]


class Pose:
    """Rigid transform: rotation quaternion plus translation."""

    __slots__ = ("pos", "quat")

    def __init__(self, pos, quat=IDENTITY_QUAT):
        self.pos = np.asarray(pos, dtype=float)
        self.quat = quat_normalize(quat)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.pos + quat_rotate(self.quat, other.pos), quat_mul(self.quat, other.quat))

    def inverse(self) -> "Pose":
        qi = quat_conj(self.quat)
        return Pose(-quat_rotate(qi, self.pos), qi)

    def transform_point(self, p):
        return self.pos + quat_rotate(self.quat, p)

    def __repr__(self):
        return f"Pose(pos={self.pos.tolist()}, quat={self.quat.tolist()})"
