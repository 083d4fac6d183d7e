"""The eight atomic robot actions binding BT leaves to control and sensing.

Each executor receives the live runtime, the action args, the blackboard and
the leaf path, runs its motion or measurement to completion (blocking), and
returns a TickStatus.  Measurement leaves write to accumulating blackboard
keys so repeated measurements coexist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from real2sim.bt import TickStatus

# blackboard keys that accumulate one entry per measurement leaf execution
ACCUMULATING_KEYS = (
    "contact_poses",
    "gripper_poses",
    "wrench_windows",
    "grasp_bias",
    "mass_measurements",
    "push_traces",
)


@dataclass
class ActionDef:
    name: str
    args: dict
    description: str
    output: str
    executor: object


class ActionRegistry:
    """Name -> (arg schema, executor) map for the atomic action set."""

    def __init__(self, tip_offset=0.10):
        self._defs = {}
        self.tip_offset = float(tip_offset)
        _register_defaults(self)

    def register(self, definition: ActionDef):
        if definition.name in self._defs:
            raise ValueError(f"action {definition.name!r} already registered")
        self._defs[definition.name] = definition

    def get(self, name) -> ActionDef:
        return self._defs[name]

    def names(self):
        return list(self._defs.keys())

    def __contains__(self, name):
        return name in self._defs

    def document(self):
        """Machine-readable registry: arg schemas, composites, tool geometry."""
        return {
            "actions": [
                {
                    "name": d.name,
                    "args": dict(d.args),
                    "description": d.description,
                    "output": d.output,
                }
                for d in self._defs.values()
            ],
            "composites": [
                {"name": "Sequence", "description": "Runs children in order; fails at the first failing child."},
                {"name": "Selector", "description": "Tries children in order; succeeds at the first succeeding child."},
            ],
            "tool": {
                "pose_frame": "tool",
                "tip_offset": self.tip_offset,
                "note": (
                    "Cartesian poses address the tool frame; the fingertip contact "
                    f"point sits {self.tip_offset} m further along the tool axis, "
                    "below the tool when it points down."
                ),
            },
        }

    def plan_schema(self):
        """JSON-schema shaped description of the plan wire format."""
        node = {
            "type": "object",
            "properties": {
                "type": {"enum": ["Sequence", "Selector", "Action"]},
                "name": {"type": "string"},
                "args": {"type": "object"},
                "children": {"type": "array", "items": {"$ref": "#/definitions/node"}},
            },
            "required": ["type", "name"],
        }
        return {
            "$schema": "http://json-schema.org/draft-07/schema#",
            "type": "object",
            "properties": {
                "explanation": {"type": "string", "minLength": 1},
                "detected_objects": {"type": "array", "items": {"type": "string"}},
                "tree": {"$ref": "#/definitions/node"},
            },
            "required": ["explanation", "detected_objects", "tree"],
            "definitions": {"node": node},
            "actions": {d.name: dict(d.args) for d in self._defs.values()},
        }


# -- executors --------------------------------------------------------------


def _move_pose(runtime, args, blackboard, path):
    target = runtime.resolve_pose(args["pose"])
    if target is None:
        return TickStatus.Failure
    return TickStatus.Success if runtime.run_motion(target) else TickStatus.Failure


def _move_joints(runtime, args, blackboard, path):
    q_d = np.asarray(args["joints"], dtype=float)
    if q_d.shape != (runtime.chain.dof,):
        return TickStatus.Failure
    return TickStatus.Success if runtime.run_joint_motion(q_d) else TickStatus.Failure


def _open_gripper(runtime, args, blackboard, path):
    runtime.gripper(close=False)
    return TickStatus.Failure if runtime.world_faulted() else TickStatus.Success


def _close_gripper(runtime, args, blackboard, path):
    bias = runtime.sample_bias_window()
    held = runtime.gripper(close=True)
    blackboard.put("grasp_bias", {"bias": bias.tolist(), "object": held, "t": runtime.time, "source": path})
    return TickStatus.Failure if runtime.world_faulted() else TickStatus.Success


def _move_down_until_contact(runtime, args, blackboard, path):
    record = runtime.run_descent()
    if record is None:
        return TickStatus.Failure
    record["source"] = path
    blackboard.put("contact_poses", record)
    return TickStatus.Success


def _measure_gripper_pose(runtime, args, blackboard, path):
    record = runtime.sample_pose()
    record["source"] = path
    blackboard.put("gripper_poses", record)
    return TickStatus.Success


def _measure_forces(runtime, args, blackboard, path):
    wrenches, t0 = runtime.sample_wrench_window()
    blackboard.put(
        "wrench_windows",
        {"samples": [w.tolist() for w in wrenches], "t": t0, "source": path},
    )
    return TickStatus.Success


def _measure_mass(runtime, args, blackboard, path):
    bias_entries = blackboard.get("grasp_bias") or []
    if not bias_entries:
        return TickStatus.Failure
    bias = np.asarray(bias_entries[-1]["bias"], dtype=float)
    held = runtime.held_object()
    wrenches, t0 = runtime.sample_wrench_window()
    samples = [(bias[2] - w[2]) / runtime.gravity for w in wrenches]
    blackboard.put(
        "mass_measurements",
        {
            "object": held,
            "samples": samples,
            "bias_fz": float(bias[2]),
            "t": t0,
            "flags": [] if held else ["empty-grasp"],
            "source": path,
        },
    )
    return TickStatus.Success


def _register_defaults(registry: ActionRegistry):
    pose_arg = {
        "pose": "target tool position [x, y, z] or {\"ref\": <metadata name>, \"offset\": [dx, dy, dz]}"
    }
    defs = [
        ActionDef("MovePose", pose_arg,
                  "Moves the gripper to a desired Cartesian pose with the compliant controller.",
                  "None", _move_pose),
        ActionDef("MoveJoints", {"joints": "desired joint configuration, one value per joint (rad)"},
                  "Moves the joints to a desired configuration.",
                  "None", _move_joints),
        ActionDef("OpenGripper", {}, "Opens the gripper, releasing any held object.",
                  "None", _open_gripper),
        ActionDef("CloseGripper", {},
                  "Closes the gripper, grasping the nearest object within reach of the fingertips.",
                  "None", _close_gripper),
        ActionDef("MoveDownUntilContact", {},
                  "Moves the gripper straight down until a contact force is detected.",
                  "Contact pose of the tool at the detected touch.", _move_down_until_contact),
        ActionDef("MeasureGripperPose", {}, "Measures the current pose of the gripper.",
                  "Tool pose.", _measure_gripper_pose),
        ActionDef("MeasureForces", {}, "Measures the external force applied on the gripper.",
                  "Wrench series over the measurement window.", _measure_forces),
        ActionDef("MeasureMass", {}, "Measures the mass of the picked object.",
                  "Mass sample series from the lifted hold.", _measure_mass),
    ]
    for d in defs:
        registry.register(d)
