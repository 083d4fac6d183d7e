"""Quasi-static micro-physics world with torque sensing.

The robot is velocity-resolved: commanded joint torques are mapped to a tool
wrench, summed with environment wrenches, and integrated through a diagonal
task-space admittance (plus a joint-space nullspace admittance), so statics
are exact and no rigid-body dynamics are simulated.  Contacts use a penalty
normal (N = k_pen * penetration) and a Coulomb stick/slip tangential model
with separate static/dynamic coefficients; the stick -> slide transition tick
reports the static bound itself.

Modeling notes that matter to consumers:

- Objects are axis-aligned boxes handled as point masses at their center;
  contact and gravity forces transmit to the robot through the fingertip
  with the lever arm to the tool frame, but a grasp carries translation
  only (the object hangs plumb, tool rotation is not transmitted).
- The robot collides with surfaces through its fingertip point only; a held
  object collides with surfaces.  Object/object interaction enters through
  support resolution when the gripper releases.
- Released (and initial) objects settle at the penalty equilibrium depth
  m*g/k_pen below their support, where the normal force balances gravity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from real2sim.kinematics import KinematicChain, RobotState, task_pinv
from real2sim.transforms import Pose

GRAVITY = 9.81
STICK_SPEED_EPS = 1e-6

# per-pair Coulomb contact modes
_STUCK, _BREAKING, _SLIDING = 0, 1, 2


@dataclass
class SurfaceSpec:
    """Horizontal support rectangle; height is the top face z."""

    name: str
    height: float
    center: np.ndarray
    half_extent: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extent = np.asarray(self.half_extent, dtype=float)

    def covers(self, xy):
        return bool(np.all(np.abs(np.asarray(xy) - self.center) <= self.half_extent))


@dataclass
class ObjectSpec:
    """Free axis-aligned box: private mass and friction pair, public size."""

    name: str
    size: np.ndarray
    pose: np.ndarray
    mass: float
    static_mu: float
    dynamic_mu: float

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float)
        self.pose = np.asarray(self.pose, dtype=float)

    @property
    def bottom(self):
        return float(self.pose[2] - 0.5 * self.size[2])

    @property
    def top(self):
        return float(self.pose[2] + 0.5 * self.size[2])

    def overlaps_xy(self, other: "ObjectSpec"):
        half = 0.5 * (self.size[:2] + other.size[:2])
        return bool(np.all(np.abs(self.pose[:2] - other.pose[:2]) <= half))


@dataclass
class ContactState:
    """One resolved contact for the current tick."""

    pair: str
    point: np.ndarray
    normal: float
    tangential: np.ndarray
    sliding: bool


@dataclass
class AttachmentState:
    """Grasped object: world-frame translation offset from the tool frame."""

    name: str
    offset: np.ndarray
    since: float


@dataclass
class WorldParams:
    dt: float = 0.008
    k_pen: float = 1.0e4
    torque_noise: float = 0.05
    grasp_tol: float = 0.02
    drop_tol: float = 0.05
    admittance_trans: float = 0.05
    admittance_rot: float = 0.2
    # lateral speed at which a breaking contact finishes the stick-to-slide
    # transition; must stay below the drag speed or sliding never establishes
    breakaway_speed: float = 0.01
    # per-tick nullspace gain; keep admittance_null * posture damping < 1
    # or the discrete nullspace loop diverges
    admittance_null: float = 0.05
    # damping used to stabilize the admittance integration; the controller's
    # own damping term vanishes at rest so this does not shift equilibria
    stabilizer_damping: np.ndarray = field(
        default_factory=lambda: 2.0 * np.sqrt(np.array([600.0] * 3 + [30.0] * 3))
    )

    def __post_init__(self):
        self.stabilizer_damping = np.asarray(self.stabilizer_damping, dtype=float)


@dataclass
class TickInfo:
    """Ground-truth byproducts of the last step, consumed by the runtime."""

    wrench: np.ndarray
    tau_ext: np.ndarray
    contacts: list
    xdot: np.ndarray | None = None  # task-space tool velocity of this tick


class GroundTruthWorld:
    """Holds private physical parameters and advances the quasi-static state."""

    def __init__(self, chain: KinematicChain, surfaces, objects, params: WorldParams | None = None,
                 seed=0, name="world"):
        self.chain = chain
        self.surfaces = list(surfaces)
        self.objects = {o.name: o for o in objects}
        self.params = params or WorldParams()
        self.rng = np.random.default_rng(seed)
        self.name = name
        self.time = 0.0
        self.attachment: AttachmentState | None = None
        self.gripper_closed = False
        self.fault: str | None = None
        self.events: list = []
        self.last_tick: TickInfo | None = None
        self._slide_mode: dict = {}
        self._settle_all()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_yaml(cls, path, chain=None, seed=0):
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        return cls.from_dict(doc, chain=chain, seed=seed)

    @classmethod
    def from_dict(cls, doc, chain=None, seed=0):
        if chain is None:
            chain = KinematicChain.from_dict(doc["chain"])
        surfaces = [
            SurfaceSpec(s["name"], float(s["height"]), s["center"], s["half_extent"])
            for s in doc.get("surfaces", [])
        ]
        objects = [
            ObjectSpec(
                o["name"], o["size"], o["pose"], float(o["mass"]),
                float(o["friction"][0]), float(o["friction"][1]),
            )
            for o in doc.get("objects", [])
        ]
        params = WorldParams(**doc.get("params", {}))
        return cls(chain, surfaces, objects, params=params, seed=seed, name=doc.get("name", "world"))

    def _support_top_under(self, obj: ObjectSpec):
        """Highest support top under an object (surfaces and other objects)."""
        tops = [s.height for s in self.surfaces if s.covers(obj.pose[:2])]
        for other in self.objects.values():
            if other.name != obj.name and obj.overlaps_xy(other) and other.top <= obj.bottom + self.params.drop_tol:
                tops.append(other.top)
        return max(tops) if tops else None

    def _settle_all(self):
        """Drop every object to its penalty rest depth, lowest first."""
        for obj in sorted(self.objects.values(), key=lambda o: o.pose[2]):
            top = self._support_top_under(obj)
            if top is not None:
                obj.pose[2] = top + 0.5 * obj.size[2] - obj.mass * GRAVITY / self.params.k_pen

    # -- gripper ----------------------------------------------------------

    def gripper_command(self, state: RobotState, close: bool):
        """Open or close the gripper; returns the held object name or None."""
        if close:
            if not self.gripper_closed:
                self.gripper_closed = True
                tip = self.chain.tip_point(state.x)
                best = None
                for obj in self.objects.values():
                    d = float(np.linalg.norm(obj.pose - tip))
                    if d <= self.params.grasp_tol and (best is None or d < best[0]):
                        best = (d, obj)
                if best is not None:
                    obj = best[1]
                    self.attachment = AttachmentState(
                        name=obj.name, offset=obj.pose - state.x.pos, since=self.time
                    )
                    self.events.append({"t": self.time, "kind": "attach", "object": obj.name})
                else:
                    self.events.append({"t": self.time, "kind": "close_empty", "object": None})
            return self.attachment.name if self.attachment else None

        if self.attachment is not None:
            obj = self.objects[self.attachment.name]
            self._release(obj)
        self.attachment = None
        self.gripper_closed = False
        return None

    def _release(self, obj: ObjectSpec):
        top = self._support_top_under(obj)
        if top is None or obj.bottom - top > self.params.drop_tol:
            self.fault = f"released {obj.name} with no support within drop tolerance"
            self.events.append({"t": self.time, "kind": "drop_fault", "object": obj.name})
            return
        obj.pose[2] = top + 0.5 * obj.size[2] - obj.mass * GRAVITY / self.params.k_pen
        self._slide_mode = {k: v for k, v in self._slide_mode.items() if not k.startswith(obj.name + "/")}
        self.events.append({"t": self.time, "kind": "release", "object": obj.name})

    # -- contact and wrench resolution -------------------------------------

    def _resolve(self, pose: Pose, w_cmd, qdot_task, update_modes):
        """External wrench at the tool and the contact set for this tick.

        w_cmd is the commanded tool wrench (trial force for the stick model);
        qdot_task is the current tool twist, used for the velocity part of
        the slide -> stick condition.
        """
        force = np.zeros(3)
        torque = np.zeros(3)
        contacts = []
        tip = self.chain.tip_point(pose)
        lever = tip - pose.pos

        if self.attachment is not None:
            obj = self.objects[self.attachment.name]
            obj.pose = pose.pos + self.attachment.offset
            f_obj = np.array([0.0, 0.0, -obj.mass * GRAVITY])

            tops = [s for s in self.surfaces if s.covers(obj.pose[:2])]
            pen, support = -1.0, None
            for s in tops:
                p = s.height - obj.bottom
                if p > pen:
                    pen, support = p, s
            if support is not None and pen > 0.0:
                normal = self.params.k_pen * pen
                pair = f"{obj.name}/{support.name}"
                trial = (w_cmd[:3] if w_cmd is not None else np.zeros(3))[:2]
                v_lat = float(np.linalg.norm(qdot_task[:2])) if qdot_task is not None else 0.0
                tangential, sliding = self._coulomb(pair, trial, normal, v_lat,
                                                    obj.static_mu, obj.dynamic_mu, update_modes)
                f_obj = f_obj + np.array([tangential[0], tangential[1], normal])
                contacts.append(ContactState(
                    pair=pair,
                    point=np.array([obj.pose[0], obj.pose[1], support.height]),
                    normal=normal, tangential=tangential, sliding=sliding,
                ))
            force += f_obj
            torque += np.cross(lever, f_obj)
        else:
            for s in self.surfaces:
                pen = s.height - tip[2]
                if pen > 0.0 and s.covers(tip[:2]):
                    normal = self.params.k_pen * pen
                    f_tip = np.array([0.0, 0.0, normal])
                    force += f_tip
                    torque += np.cross(lever, f_tip)
                    contacts.append(ContactState(
                        pair=f"tip/{s.name}",
                        point=np.array([tip[0], tip[1], s.height]),
                        normal=normal, tangential=np.zeros(2), sliding=False,
                    ))

        return np.concatenate([force, torque]), contacts

    def _coulomb(self, pair, trial, normal, v_lat, mu_s, mu_d, update_modes):
        """Coulomb stick/slip tangential reaction for one contact pair.

        Returns (tangential force (2,), sliding flag).  Three modes per pair:
        stuck (reaction cancels the trial force, tool pinned), breaking (the
        trial force exceeded the static bound; the contact sustains exactly
        mu_s*N through the pre-sliding transient until the lateral speed
        reaches breakaway_speed), and sliding (reaction is exactly mu_d*N
        opposing the drive).  The flag is True only while sliding.
        """
        trial = np.asarray(trial, dtype=float)
        trial_norm = float(np.linalg.norm(trial))
        mode = self._slide_mode.get(pair, _STUCK)

        if mode == _STUCK:
            if trial_norm <= mu_s * normal or trial_norm == 0.0:
                return -trial, False
            if update_modes:
                self._slide_mode[pair] = _BREAKING
            return -(mu_s * normal) * trial / trial_norm, False

        if mode == _BREAKING:
            if trial_norm < mu_d * normal:
                if update_modes:
                    self._slide_mode[pair] = _STUCK
                return -trial, False
            if v_lat >= self.params.breakaway_speed:
                if update_modes:
                    self._slide_mode[pair] = _SLIDING
                return -(mu_d * normal) * trial / trial_norm, True
            return -(mu_s * normal) * trial / trial_norm, False

        if trial_norm < mu_d * normal or (v_lat < STICK_SPEED_EPS and trial_norm <= mu_s * normal):
            if update_modes:
                self._slide_mode[pair] = _STUCK
            return -trial, False
        if trial_norm == 0.0:
            return np.zeros(2), True
        return -(mu_d * normal) * trial / trial_norm, True

    # -- spec surface ------------------------------------------------------

    def step(self, state: RobotState, tau_cmd, dt=None):
        """Advance one tick under commanded joint torques.

        Returns the new RobotState.  Sets self.fault and leaves the world
        unchanged when the command is not finite.
        """
        dt = self.params.dt if dt is None else float(dt)
        tau_cmd = np.asarray(tau_cmd, dtype=float)
        if not np.all(np.isfinite(tau_cmd)):
            self.fault = "non-finite torque command"
            return state

        if state.jac is not None:
            pose, jac = state.x, state.jac
        else:
            pose, jac = self.chain.fk_jac(state.q)
        pinv = task_pinv(jac)
        w_cmd = pinv.T @ tau_cmd
        qdot_task_now = jac @ state.qdot
        w_ext, contacts = self._resolve(pose, w_cmd, qdot_task_now, update_modes=True)

        p = self.params
        adm = np.array([p.admittance_trans] * 3 + [p.admittance_rot] * 3)
        xdot = adm * (w_cmd + w_ext) / (1.0 + 2.0 * adm * p.stabilizer_damping)
        qdot = pinv @ xdot
        if p.admittance_null > 0.0:
            proj = np.eye(self.chain.dof) - pinv @ jac
            qdot = qdot + p.admittance_null * (proj @ tau_cmd)

        q_new = state.q + qdot * dt
        pose_new, jac_new = self.chain.fk_jac(q_new)
        if self.attachment is not None:
            self.objects[self.attachment.name].pose = pose_new.pos + self.attachment.offset

        self.time += dt
        self.last_tick = TickInfo(wrench=w_ext, tau_ext=jac.T @ w_ext, contacts=contacts,
                                  xdot=xdot)
        return RobotState(q=q_new, qdot=qdot, x=pose_new, jac=jac_new)

    def draw_torque_noise(self):
        """One tick worth of torque-sensor noise (drawn even when sigma=0)."""
        return self.params.torque_noise * self.rng.standard_normal(self.chain.dof)

    def sense_external_torques(self, state: RobotState):
        """Noisy external joint torques for the current static situation."""
        pose, jac = self.chain.fk_jac(state.q)
        w_ext, _ = self._resolve(pose, np.zeros(6), np.zeros(6), update_modes=False)
        return jac.T @ w_ext + self.draw_torque_noise()

    def contact_forces(self, state: RobotState):
        """Contacts for the current configuration with zero commanded wrench."""
        pose, _ = self.chain.fk_jac(state.q)
        _, contacts = self._resolve(pose, np.zeros(6), np.zeros(6), update_modes=False)
        return contacts


def step(world: GroundTruthWorld, state: RobotState, tau_cmd, dt=None):
    """Functional wrapper: returns (world, new_state)."""
    return world, world.step(state, tau_cmd, dt)


def sense_external_torques(world: GroundTruthWorld, state: RobotState):
    return world.sense_external_torques(state)


def gripper_command(world: GroundTruthWorld, state: RobotState, close: bool):
    return world.gripper_command(state, close)


def contact_forces(world: GroundTruthWorld, state: RobotState):
    return world.contact_forces(state)
