"""Cartesian impedance control with nullspace posture regulation.

Commanded torque:

    tau = J^T [-K e - D (J qdot)] + C(q, qdot)
          + (I - J^T J^+T) [k_ns (q_d - q) - 2 sqrt(k_ns) qdot]

where e stacks the position error (x - x_d) and the rotation-vector
orientation error, K and D are diagonal task-space stiffness/damping, and
the last term regulates posture without disturbing the tool.  C is a
pluggable dynamics-compensation hook and defaults to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from real2sim.kinematics import task_pinv
from real2sim.transforms import Pose, orientation_error

DEFAULT_TRANS_STIFFNESS = 600.0
DEFAULT_ROT_STIFFNESS = 30.0
DEFAULT_NULLSPACE_STIFFNESS = 10.0


@dataclass
class ImpedanceGains:
    """Diagonal task stiffness/damping plus nullspace posture stiffness."""

    stiffness: np.ndarray = field(
        default_factory=lambda: np.array([DEFAULT_TRANS_STIFFNESS] * 3 + [DEFAULT_ROT_STIFFNESS] * 3)
    )
    damping: np.ndarray | None = None
    nullspace_stiffness: float = DEFAULT_NULLSPACE_STIFFNESS

    def __post_init__(self):
        self.stiffness = np.asarray(self.stiffness, dtype=float)
        if self.stiffness.shape != (6,):
            raise ValueError("stiffness must be a 6-vector")
        if np.any(self.stiffness < 0.0):
            raise ValueError("stiffness must be non-negative")
        if self.damping is None:
            # critically damped per axis for a unit-mass task model
            self.damping = 2.0 * np.sqrt(self.stiffness)
        self.damping = np.asarray(self.damping, dtype=float)
        if self.damping.shape != (6,):
            raise ValueError("damping must be a 6-vector")
        if self.nullspace_stiffness < 0.0:
            raise ValueError("nullspace stiffness must be non-negative")


@dataclass
class ControlTarget:
    """Desired tool pose and preferred posture."""

    pose: Pose
    posture: np.ndarray | None = None


def pose_error(x: Pose, target: Pose):
    """6-vector task error: position difference and rotation vector."""
    return np.concatenate([x.pos - target.pos, orientation_error(x.quat, target.quat)])


def nullspace_projector(jac, damping=None):
    """Torque-space projector I - J^T J^+T onto motions invisible at the tool."""
    kwargs = {} if damping is None else {"damping": damping}
    pinv = task_pinv(jac, **kwargs)
    n = jac.shape[1]
    return np.eye(n) - jac.T @ pinv.T


def impedance_torque(state, target: ControlTarget, gains: ImpedanceGains, jac,
                     coriolis_term=None):
    """Joint torque command for one control tick."""
    e = pose_error(state.x, target.pose)
    xdot = jac @ state.qdot
    task_force = -gains.stiffness * e - gains.damping * xdot
    tau = jac.T @ task_force
    if coriolis_term is not None:
        tau = tau + coriolis_term(state)
    if target.posture is not None and gains.nullspace_stiffness > 0.0:
        k = gains.nullspace_stiffness
        posture_tau = k * (target.posture - state.q) - 2.0 * np.sqrt(k) * state.qdot
        tau = tau + nullspace_projector(jac) @ posture_tau
    return tau
