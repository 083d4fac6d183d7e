"""Exploration runtime: executes behavior trees against the simulated world.

Owns the control loop (impedance tick + world step + sensor log), resolves
plan poses through the scene metadata, and provides the sampling primitives
the atomic actions are built from.  Every sensed quantity an estimator may
consume is written to the per-tick sensor log, so estimates computed from the
live run and from archived logs are identical by construction.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from real2sim import bt
from real2sim.actions import ACCUMULATING_KEYS, ActionRegistry
from real2sim.bt import Blackboard, TickStatus
from real2sim.control import ControlTarget, ImpedanceGains, impedance_torque
from real2sim.kinematics import RobotState, wrench_from_torques
from real2sim.transforms import Pose
from real2sim.world import GRAVITY, GroundTruthWorld

DOWN_QUAT = (0.0, 0.0, 1.0, 0.0)  # tool z-axis pointing at the floor


@dataclass
class EngineConfig:
    move_speed: float = 0.08
    contact_speed: float = 0.02
    descent_speed: float = 0.02
    pose_tol: float = 0.005
    rot_tol: float = math.radians(2.0)
    joint_tol: float = 0.01
    settle_eps: float = 1e-6
    action_timeout: float = 20.0
    measure_window: int = 200
    contact_threshold: float = 3.0
    workspace_floor: float = 0.0
    # joint PD for MoveJoints; the admittance integration adds velocity
    # feedback of its own, so joint_kd must stay small or the discrete
    # velocity loop diverges (gain * dt * ||J+ A J+T|| must stay below 1)
    joint_kp: float = 100.0
    joint_kd: float = 2.0
    gravity: float = GRAVITY
    down_quat: tuple = DOWN_QUAT
    gains: ImpedanceGains = field(default_factory=ImpedanceGains)

    def to_dict(self):
        return {
            "move_speed": self.move_speed,
            "contact_speed": self.contact_speed,
            "descent_speed": self.descent_speed,
            "pose_tol": self.pose_tol,
            "rot_tol": self.rot_tol,
            "joint_tol": self.joint_tol,
            "settle_eps": self.settle_eps,
            "action_timeout": self.action_timeout,
            "measure_window": self.measure_window,
            "contact_threshold": self.contact_threshold,
            "workspace_floor": self.workspace_floor,
            "joint_kp": self.joint_kp,
            "joint_kd": self.joint_kd,
            "gravity": self.gravity,
        }


class ExplorationRuntime:
    """One repeat's executor: world, robot state, logs, and action primitives."""

    def __init__(self, world: GroundTruthWorld, metadata, config: EngineConfig | None = None,
                 registry: ActionRegistry | None = None):
        self.world = world
        self.chain = world.chain
        self.config = config or EngineConfig()
        self.registry = registry or ActionRegistry(tip_offset=self.chain.tip_offset)
        self.metadata = {m["name"]: m for m in metadata}
        self.state = RobotState.at(self.chain, self.chain.home)
        self._jac = self.state.jac
        self.target_pos = self.state.x.pos.copy()
        self.target_quat = self.state.x.quat.copy()
        self.records: list = []
        self.trace: list = []
        self._last_sensed = None
        self._sense_jac = None

    # -- bt runtime protocol ----------------------------------------------

    @property
    def time(self):
        return self.world.time

    @property
    def gravity(self):
        return self.config.gravity

    def record_trace(self, path, event, status):
        self.trace.append(
            {"path": path, "event": event,
             "status": status.value if status is not None else None, "t": self.world.time}
        )

    def execute_action(self, name, args, blackboard, path):
        if name not in self.registry:
            self.record_trace(path, "diagnostic", None)
            return TickStatus.Failure
        if self.world.fault:
            return TickStatus.Failure
        try:
            return self.registry.get(name).executor(self, args, blackboard, path)
        except KeyError:
            return TickStatus.Failure

    def run_tree(self, tree: bt.BTNode) -> TickStatus:
        blackboard = Blackboard(accumulating=ACCUMULATING_KEYS)
        status = bt.tick(tree, blackboard, self)
        self.blackboard = blackboard
        if self.world.fault and status is TickStatus.Success:
            status = TickStatus.Failure
        return status

    # -- control tick -------------------------------------------------------

    def _tick(self, joint_tau=None):
        """One control + physics + logging cycle."""
        if joint_tau is None:
            target = ControlTarget(pose=Pose(self.target_pos, self.target_quat),
                                   posture=self.chain.home)
            tau = impedance_torque(self.state, target, self.config.gains, self._jac)
        else:
            tau = joint_tau
        t = self.world.time
        pre = self.state
        self.state = self.world.step(pre, tau)
        if self.world.fault is not None:
            self._last_sensed = None
            return None
        info = self.world.last_tick
        sensed = info.tau_ext + self.world.draw_torque_noise()
        self._last_sensed = sensed
        self._sense_jac = pre.jac  # tau_ext was produced at the pre-step configuration
        rec = {
            "t": t,
            "q": pre.q.tolist(),
            "tau_ext": sensed.tolist(),
            "x_ee": {"pos": pre.x.pos.tolist(), "quat": pre.x.quat.tolist()},
            "gripper": {
                "closed": self.world.gripper_closed,
                "held": self.world.attachment.name if self.world.attachment else None,
            },
            "contacts": [
                {
                    "pair": c.pair,
                    "point": c.point.tolist(),
                    "normal": c.normal,
                    "tangential": c.tangential.tolist(),
                    "sliding": c.sliding,
                }
                for c in info.contacts
            ],
        }
        self.records.append(rec)
        self._jac = self.state.jac
        return rec

    def _sensed_wrench(self):
        """Wrench recovered from the most recent tick's sensed torques."""
        if self._last_sensed is None:
            return None
        w, _ = wrench_from_torques(self._sense_jac, self._last_sensed)
        return w.as_vector()

    def _task_speed(self):
        info = self.world.last_tick
        if info is not None and info.xdot is not None:
            v = info.xdot
        else:
            v = self._jac @ self.state.qdot
        return float(np.linalg.norm(v[:3])), float(np.linalg.norm(v[3:]))

    def _converged(self):
        """Pose convergence against the impedance equilibrium.

        A constant external wrench (payload, light contact) deflects the tool
        by w/K at rest, exactly as on the physical controller; convergence is
        therefore judged on the error corrected by the sensed deflection.
        """
        w = self._sensed_wrench()
        if w is None:
            return False
        e = np.concatenate([
            self.state.x.pos - self.target_pos,
            _rot_error(self.state.x.quat, self.target_quat),
        ])
        stiff = self.config.gains.stiffness
        corrected = e - np.where(stiff > 0.0, w / np.where(stiff > 0.0, stiff, 1.0), 0.0)
        v_lin, v_rot = self._task_speed()
        return (
            np.linalg.norm(corrected[:3]) < self.config.pose_tol
            and np.linalg.norm(corrected[3:]) < self.config.rot_tol
            and v_lin < self.config.settle_eps
            and v_rot < 10.0 * self.config.settle_eps
        )

    # -- motion primitives ---------------------------------------------------

    def run_motion(self, target_pos, target_quat=None) -> bool:
        """Ramp the Cartesian target to target_pos, then settle; True on convergence."""
        target_pos = np.asarray(target_pos, dtype=float)
        quat = np.asarray(target_quat if target_quat is not None else self.config.down_quat,
                          dtype=float)
        start = self.state.x.pos.copy()
        delta = target_pos - start
        dist = float(np.linalg.norm(delta))

        speed = self.config.move_speed
        if (self.world.attachment is not None and self.world.last_tick is not None
                and self.world.last_tick.contacts
                and np.linalg.norm(delta[:2]) > abs(delta[2])):
            # lateral motion with the payload in contact: move at probe speed
            speed = self.config.contact_speed

        dt = self.world.params.dt
        ramp_ticks = int(math.ceil(dist / (speed * dt))) if dist > 0.0 else 0
        deadline = self.world.time + self.config.action_timeout
        self.target_quat = quat
        for k in range(1, ramp_ticks + 1):
            self.target_pos = start + delta * (k / ramp_ticks)
            if self._tick() is None:
                return False
            if self.world.time > deadline:
                return False
        self.target_pos = target_pos.copy()
        while self.world.time <= deadline:
            if self._tick() is None:
                return False
            if self._converged():
                return True
        return False

    def run_joint_motion(self, q_d) -> bool:
        """Joint-space PD motion to q_d; True when every joint is within tolerance."""
        deadline = self.world.time + self.config.action_timeout
        while self.world.time <= deadline:
            tau = self.config.joint_kp * (q_d - self.state.q) - self.config.joint_kd * self.state.qdot
            if self._tick(joint_tau=tau) is None:
                return False
            if (np.max(np.abs(q_d - self.state.q)) < self.config.joint_tol
                    and np.max(np.abs(self.state.qdot)) < 1e-5):
                # hold the reached pose for subsequent Cartesian motions
                self.target_pos = self.state.x.pos.copy()
                self.target_quat = self.state.x.quat.copy()
                return True
        return False

    def run_descent(self):
        """Descend until the sensed tool force exceeds the contact threshold.

        Returns the contact record {"pose", "t"} or None on timeout/floor.
        """
        dt = self.world.params.dt
        deadline = self.world.time + self.config.action_timeout
        x_d = self.target_pos.copy()
        while self.world.time <= deadline:
            x_d[2] -= self.config.descent_speed * dt
            if x_d[2] - self.chain.tip_offset < self.config.workspace_floor:
                return None
            self.target_pos = x_d.copy()
            rec = self._tick()
            if rec is None:
                return None
            w = self._sensed_wrench()
            if w is not None and np.linalg.norm(w[:3]) >= self.config.contact_threshold:
                return {"pose": rec["x_ee"], "t": rec["t"]}
        return None

    # -- sensing primitives ---------------------------------------------------

    def _hold_window(self, n):
        out = []
        for _ in range(n):
            rec = self._tick()
            if rec is None:
                break
            w = self._sensed_wrench()
            out.append(w)
        return out

    def sample_bias_window(self):
        """Mean tool wrench over one measurement window at the current hold."""
        samples = self._hold_window(self.config.measure_window)
        if not samples:
            return np.zeros(6)
        return np.mean(np.asarray(samples), axis=0)

    def sample_wrench_window(self):
        t0 = self.world.time
        return self._hold_window(self.config.measure_window), t0

    def sample_pose(self):
        rec = self._tick()
        if rec is None:
            return {"pose": {"pos": self.state.x.pos.tolist(), "quat": self.state.x.quat.tolist()},
                    "t": self.world.time}
        return {"pose": rec["x_ee"], "t": rec["t"]}

    def gripper(self, close: bool):
        held = self.world.gripper_command(self.state, close)
        self._tick()  # log the new gripper state
        return held

    def held_object(self):
        return self.world.attachment.name if self.world.attachment else None

    def world_faulted(self):
        return self.world.fault is not None

    def resolve_pose(self, spec):
        """Plan pose -> world position: absolute triple or metadata ref + offset."""
        if isinstance(spec, dict):
            entry = self.metadata.get(spec.get("ref"))
            if entry is None:
                return None
            offset = np.asarray(spec.get("offset", (0.0, 0.0, 0.0)), dtype=float)
            return np.asarray(entry["pose"], dtype=float) + offset
        pos = np.asarray(spec, dtype=float)
        return pos if pos.shape == (3,) else None

    # -- log output ------------------------------------------------------------

    def write_logs(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sensors.jsonl"), "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")
        with open(os.path.join(out_dir, "trace.jsonl"), "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")


def _rot_error(quat, quat_d):
    from real2sim.transforms import orientation_error

    return orientation_error(quat, quat_d)
