"""Serial-chain kinematics: tool pose, geometric Jacobian, torque/wrench maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from real2sim._core import chain_fk_jac
from real2sim.transforms import IDENTITY_QUAT, Pose, quat_normalize

DLS_DAMPING = 1e-6
RANK_EPS = 1e-10


class KinematicChain:
    """Revolute serial chain described by per-joint frames plus a tool offset.

    Joint i is reached by translating by origins[i] and applying the fixed
    rotation rot_offsets[i]; the joint then rotates about axes[i] (unit, in
    the local frame).  tip_offset is the calibrated distance from the tool
    frame to the fingertip contact point along the tool +z axis, so the tip
    sits below the tool whenever the tool points straight down.
    """

    def __init__(self, axes, origins, rot_offsets=None, tool_origin=(0.0, 0.0, 0.0),
                 tool_rot=IDENTITY_QUAT, tip_offset=0.0, home=None, name="chain"):
        self.axes = np.ascontiguousarray(axes, dtype=float)
        self.origins = np.ascontiguousarray(origins, dtype=float)
        self.dof = self.axes.shape[0]
        if self.axes.shape != (self.dof, 3) or self.origins.shape != (self.dof, 3):
            raise ValueError("axes and origins must both be (dof, 3)")
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("joint axes must be unit vectors")
        if rot_offsets is None:
            rot_offsets = np.tile(IDENTITY_QUAT, (self.dof, 1))
        self.rot_offsets = np.ascontiguousarray(
            [quat_normalize(r) for r in np.asarray(rot_offsets, dtype=float)]
        )
        self.tool_origin = np.ascontiguousarray(tool_origin, dtype=float)
        self.tool_rot = np.ascontiguousarray(quat_normalize(tool_rot))
        self.tip_offset = float(tip_offset)
        self.home = np.zeros(self.dof) if home is None else np.asarray(home, dtype=float)
        if self.home.shape != (self.dof,):
            raise ValueError("home posture length must match dof")
        self.name = name

    def fk_jac(self, q):
        """Fused tool pose + Jacobian evaluation (single kernel call)."""
        q = np.ascontiguousarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise ValueError(f"expected {self.dof} joint values, got {q.shape}")
        pos, quat, jac = chain_fk_jac(
            self.axes, self.origins, self.rot_offsets, self.tool_origin, self.tool_rot, q
        )
        return Pose(pos, quat), jac

    def tip_point(self, tool_pose: Pose):
        """Fingertip contact point for a given tool pose."""
        return tool_pose.transform_point(np.array([0.0, 0.0, self.tip_offset]))

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc):
        joints = doc["joints"]
        axes = [j["axis"] for j in joints]
        origins = [j["origin"] for j in joints]
        rot_offsets = [j.get("rot", list(IDENTITY_QUAT)) for j in joints]
        tool = doc.get("tool", {})
        return cls(
            axes,
            origins,
            rot_offsets,
            tool_origin=tool.get("origin", (0.0, 0.0, 0.0)),
            tool_rot=tool.get("rot", IDENTITY_QUAT),
            tip_offset=doc.get("tip_offset", 0.0),
            home=doc.get("home"),
            name=doc.get("name", "chain"),
        )


@dataclass
class RobotState:
    """Joint positions/velocities plus the matching tool pose."""

    q: np.ndarray
    qdot: np.ndarray
    x: Pose
    jac: np.ndarray | None = None  # Jacobian at q, cached to avoid repeat FK

    @classmethod
    def at(cls, chain: KinematicChain, q):
        q = np.asarray(q, dtype=float)
        pose, jac = chain.fk_jac(q)
        return cls(q=q.copy(), qdot=np.zeros_like(q), x=pose, jac=jac)


@dataclass
class Wrench:
    """Force and torque expressed at the tool frame."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.force, self.torque])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(force=vec[:3].copy(), torque=vec[3:].copy())


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """Tool pose for joint positions q."""
    pose, _ = chain.fk_jac(q)
    return pose


def jacobian(chain: KinematicChain, q):
    """Geometric Jacobian (6 x dof) mapping qdot to tool twist."""
    _, jac = chain.fk_jac(q)
    return jac


def torques_from_wrench(jac, wrench: Wrench):
    """Joint torques equivalent to an external wrench at the tool: J^T w."""
    return jac.T @ wrench.as_vector()


def wrench_from_torques(jac, tau):
    """Least-squares wrench estimate from external joint torques.

    Solves J^T w = tau undamped, so a torque produced by a physical wrench is
    recovered exactly on a full-rank Jacobian.  Returns (wrench,
    rank_deficient); the flag is set when the smallest singular value of J
    drops below RANK_EPS, in which case some wrench directions are
    unobservable and the returned estimate is the minimum-norm one.
    """
    tau = np.asarray(tau, dtype=float)
    w, _, rank, sv = np.linalg.lstsq(jac.T, tau, rcond=None)
    deficient = bool(rank < 6 or sv[-1] < RANK_EPS)
    return Wrench.from_vector(w), deficient


def task_pinv(jac, damping=DLS_DAMPING):
    """Damped pseudoinverse J^+ = J^T (J J^T + damping I)^-1."""
    gram = jac @ jac.T + damping * np.eye(6)
    return jac.T @ np.linalg.inv(gram)
