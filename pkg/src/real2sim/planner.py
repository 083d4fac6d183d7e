"""Prompt composition, planner clients, plan validation, and the guard rails.

The planner is pluggable: a remote VLM endpoint over HTTP or a deterministic
mock that replays canned plans for the test scenarios.  Both return the same
wire format, a JSON document {explanation, detected_objects, tree}.
"""

from __future__ import annotations

import copy
import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources

from real2sim.actions import ActionRegistry
from real2sim.bt import COMPOSITE_TYPES

PLACEHOLDERS = ("{SIM_DESCRIPTION}", "{USER_REQUEST}", "{OBJECT_METADATA}", "{ACTION_LIST}")
NO_DESCRIPTION = "(no simulation description provided)"

PARAMETER_KINDS = ("mass", "dimensions", "friction", "surface_height")

MOCK_SCENARIOS = ("height+mass", "mass-only", "friction", "occlusion", "hallucination")


class PlanSchemaError(ValueError):
    """The planner response does not match the plan document schema."""


class PlannerTransportError(RuntimeError):
    """The remote planner could not be reached or timed out."""


def default_template():
    return resources.files("real2sim").joinpath("assets/system_prompt.txt").read_text()


@dataclass
class PromptBundle:
    """Everything that goes into one planning request."""

    user_request: str
    sim_description: str = ""
    image_ref: str = ""
    metadata: list = field(default_factory=list)
    system_template: str = ""

    def __post_init__(self):
        if not self.system_template:
            self.system_template = default_template()


@dataclass
class PlanDocument:
    """Parsed planner output: explanation, claimed detections, and the tree."""

    explanation: str
    tree: dict
    detected_objects: list
    raw: str = ""
    validated: bool = False

    def to_dict(self):
        return {
            "explanation": self.explanation,
            "detected_objects": list(self.detected_objects),
            "tree": self.tree,
        }


@dataclass
class RequiredParameters:
    """The set of (target name, parameter kind) pairs still missing from D."""

    phi: frozenset
    diagnostics: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.phi)

    def __len__(self):
        return len(self.phi)


def _render_metadata(metadata):
    lines = []
    for entry in metadata:
        pose = entry.get("pose")
        shown = entry.get("symbol") if entry.get("symbol") else list(map(float, pose))
        lines.append(
            f'{{"name": "{entry["name"]}", "kind": "{entry.get("kind", "object")}", "pose": {shown}}}'
        )
    return "```\n" + "\n".join(lines) + "\n```"


def compose_prompt(bundle: PromptBundle, registry: ActionRegistry):
    """Substitute the bundle into the system template; returns (text, image_ref)."""
    if not bundle.user_request or not bundle.user_request.strip():
        raise ValueError("user request is required")
    names = [m["name"] for m in bundle.metadata]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ValueError(f"duplicate metadata names: {sorted(dupes)}")
    text = bundle.system_template
    for ph in PLACEHOLDERS:
        count = text.count(ph)
        if count != 1:
            raise ValueError(f"template must contain {ph} exactly once, found {count}")

    action_lines = "\n".join(
        f"- {a['name']}({', '.join(a['args']) if a['args'] else 'None'})"
        f" -> {a['output']}: {a['description']}"
        for a in registry.document()["actions"]
    )
    sim_text = bundle.sim_description.strip() or NO_DESCRIPTION
    text = text.replace("{OBJECT_METADATA}", _render_metadata(bundle.metadata))
    text = text.replace("{ACTION_LIST}", action_lines)
    text = text.replace("{SIM_DESCRIPTION}", sim_text)
    text = text.replace("{USER_REQUEST}", bundle.user_request.strip())
    return text, bundle.image_ref


# -- plan parsing and validation -----------------------------------------------


def _check_node(node, path):
    if not isinstance(node, dict):
        raise PlanSchemaError(f"{path}: node must be an object")
    ntype = node.get("type")
    if ntype not in COMPOSITE_TYPES and ntype != "Action":
        raise PlanSchemaError(f"{path}: unknown node type {ntype!r}")
    if not isinstance(node.get("name"), str) or not node["name"]:
        raise PlanSchemaError(f"{path}: node name must be a non-empty string")
    children = node.get("children", [])
    if ntype == "Action":
        if children:
            raise PlanSchemaError(f"{path}: action nodes cannot have children")
        if not isinstance(node.get("args", {}), dict):
            raise PlanSchemaError(f"{path}: action args must be an object")
    else:
        if not isinstance(children, list) or not children:
            raise PlanSchemaError(f"{path}: composite nodes need a non-empty children list")
        for i, child in enumerate(children):
            _check_node(child, f"{path}/{i}")


def parse_plan(text) -> PlanDocument:
    """Parse raw planner output into a PlanDocument, or raise PlanSchemaError."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanSchemaError(f"response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PlanSchemaError("$: document must be an object")
    expl = doc.get("explanation")
    if not isinstance(expl, str) or not expl.strip():
        raise PlanSchemaError("$.explanation: must be a non-empty string")
    detected = doc.get("detected_objects")
    if not isinstance(detected, list) or not all(isinstance(d, str) for d in detected):
        raise PlanSchemaError("$.detected_objects: must be a list of strings")
    tree = doc.get("tree")
    _check_node(tree, "$.tree")
    return PlanDocument(explanation=expl, tree=tree, detected_objects=detected, raw=text)


def _walk_actions(node, path):
    name = f"{path}/{node['name']}" if path else node["name"]
    if node["type"] == "Action":
        yield name, node
    for child in node.get("children", []):
        yield from _walk_actions(child, name)


def _pose_arg_ok(value):
    if isinstance(value, (list, tuple)):
        return len(value) == 3 and all(isinstance(v, (int, float)) for v in value)
    if isinstance(value, dict):
        if not isinstance(value.get("ref"), str):
            return False
        off = value.get("offset", [0.0, 0.0, 0.0])
        return isinstance(off, (list, tuple)) and len(off) == 3
    return False


def validate_plan(plan: PlanDocument, registry: ActionRegistry):
    """Structural violations that would make the plan unexecutable."""
    violations = []
    try:
        _check_node(plan.tree, "$.tree")
    except PlanSchemaError as exc:
        return [str(exc)]
    for path, node in _walk_actions(plan.tree, ""):
        name = node["name"]
        if name not in registry:
            violations.append(f"{path}: unknown action {name!r}")
            continue
        args = node.get("args", {})
        spec = registry.get(name)
        if "pose" in spec.args:
            if not _pose_arg_ok(args.get("pose")):
                violations.append(f"{path}: {name} needs a pose argument "
                                  "([x, y, z] or {ref, offset})")
        elif "joints" in spec.args:
            joints = args.get("joints")
            if not isinstance(joints, (list, tuple)) or not joints or not all(
                isinstance(v, (int, float)) for v in joints
            ):
                violations.append(f"{path}: {name} needs a numeric joints list")
        else:
            if args:
                violations.append(f"{path}: {name} takes no arguments")
    if not violations:
        plan.validated = True
    return violations


# -- hallucination guard ---------------------------------------------------------


def _referenced_objects(node):
    refs = set()
    for _, action in _walk_actions(node, ""):
        pose = action.get("args", {}).get("pose")
        if isinstance(pose, dict) and isinstance(pose.get("ref"), str):
            refs.add(pose["ref"])
    return refs


def hallucination_guard(plan: PlanDocument, metadata, detected_objects=None):
    """Drop subtrees that reference objects failing the dual membership test.

    An object reference survives only if the object is in the planner's own
    detected set AND has a metadata entry.  Named locations (metadata kind
    other than "object") only need the metadata entry.  Returns
    (filtered plan or None, report).
    """
    detected = set(plan.detected_objects if detected_objects is None else detected_objects)
    meta = {m["name"]: m for m in metadata}

    def bad_refs(subtree):
        out = []
        for ref in sorted(_referenced_objects(subtree)):
            entry = meta.get(ref)
            if entry is None:
                out.append((ref, "pose unavailable in metadata"))
            elif entry.get("kind", "object") == "object" and ref not in detected:
                out.append((ref, "not in detected objects"))
        return out

    report = {"removals": [], "rejected": False, "reason": ""}
    tree = copy.deepcopy(plan.tree)
    if tree["type"] == "Action":
        bad = bad_refs(tree)
        if bad:
            for ref, why in bad:
                report["removals"].append({"object": ref, "reason": why, "subtree": tree["name"]})
            report["rejected"] = True
            report["reason"] = "every subtree was removed by the object guard"
            return None, report
        return plan, report

    kept = []
    for child in tree["children"]:
        bad = bad_refs(child)
        if bad:
            for ref, why in bad:
                report["removals"].append(
                    {"object": ref, "reason": why, "subtree": child["name"]}
                )
        else:
            kept.append(child)
    if not kept:
        report["rejected"] = True
        report["reason"] = "every subtree was removed by the object guard"
        return None, report
    tree["children"] = kept
    filtered = PlanDocument(
        explanation=plan.explanation, tree=tree,
        detected_objects=list(plan.detected_objects), raw=plan.raw,
        validated=plan.validated,
    )
    return filtered, report


# -- missing parameter discovery ---------------------------------------------------


def missing_parameters(scene, request_targets=None) -> RequiredParameters:
    """Parameters absent from the scene description for the targeted bodies."""
    bodies = {b.name: b for b in scene.bodies}
    targets = list(request_targets) if request_targets is not None else list(bodies)
    phi = set()
    diagnostics = []
    for name in targets:
        body = bodies.get(name)
        if body is None:
            diagnostics.append(f"unknown object: {name}")
            continue
        if body.role == "surface":
            if body.height is None:
                phi.add((name, "surface_height"))
            continue
        if body.mass is None:
            phi.add((name, "mass"))
        if body.friction is None:
            phi.add((name, "friction"))
        if body.size is None:
            phi.add((name, "dimensions"))
    return RequiredParameters(phi=frozenset(phi), diagnostics=diagnostics)


# -- canned plans -----------------------------------------------------------------


def _action(name, **args):
    return {"type": "Action", "name": name, "args": args}


def _seq(name, *children):
    return {"type": "Sequence", "name": name, "children": list(children)}


def _pose(ref, dx=0.0, dy=0.0, dz=0.0):
    return {"pose": {"ref": ref, "offset": [dx, dy, dz]}}


def _grasp_sequence(label, target, grasp_dz, lift_dz, measure=True):
    steps = [
        _action("MovePose", **_pose(target, dz=grasp_dz + 0.15)),
        _action("OpenGripper"),
        _action("MovePose", **_pose(target, dz=grasp_dz)),
        _action("CloseGripper"),
        _action("MovePose", **_pose(target, dz=grasp_dz + lift_dz)),
    ]
    if measure:
        steps.append(_action("MeasureMass"))
    steps += [
        _action("MovePose", **_pose(target, dz=grasp_dz)),
        _action("OpenGripper"),
        _action("MovePose", **_pose(target, dz=grasp_dz + 0.15)),
    ]
    return _seq(label, *steps)


def _mock_tree(scenario, target):
    if scenario == "height+mass":
        probe = _seq(
            "measure_table_height",
            _action("MovePose", **_pose("table", dz=0.15)),
            _action("MoveDownUntilContact"),
            _action("MeasureGripperPose"),
            _action("MovePose", **_pose("table", dz=0.15)),
        )
        weigh = _grasp_sequence("measure_bottle_mass", target or "blue_bottle", 0.10, 0.15)
        return _seq("estimate_missing_parameters", probe, weigh)
    if scenario == "mass-only":
        return _seq(
            "estimate_missing_parameters",
            _grasp_sequence("measure_bottle_mass", target or "blue_bottle", 0.10, 0.15),
        )
    if scenario == "friction":
        obj = target or "box"
        return _seq(
            "measure_mass_and_push",
            _grasp_sequence("measure_box_mass", obj, 0.10, 0.15),
            _seq(
                "drag_box_for_friction",
                _action("MovePose", **_pose(obj, dz=0.25)),
                _action("OpenGripper"),
                _action("MovePose", **_pose(obj, dz=0.10)),
                _action("CloseGripper"),
                _action("MeasureForces"),
                _action("MovePose", **_pose(obj, dx=0.12, dz=0.10)),
                _action("MovePose", **_pose(obj, dz=0.10)),
                _action("OpenGripper"),
                _action("MovePose", **_pose(obj, dz=0.25)),
            ),
        )
    if scenario == "occlusion":
        relocate = _seq(
            "relocate_red_box",
            _action("MovePose", **_pose("red_box", dz=0.20)),
            _action("OpenGripper"),
            _action("MovePose", **_pose("red_box", dz=0.10)),
            _action("CloseGripper"),
            _action("MovePose", **_pose("red_box", dz=0.20)),
            _action("MovePose", **_pose("temporary_pose", dz=0.20)),
            _action("MovePose", **_pose("temporary_pose", dz=0.11)),
            _action("OpenGripper"),
            _action("MovePose", **_pose("temporary_pose", dz=0.20)),
        )
        weigh = _grasp_sequence("measure_blue_box_mass", "blue_box", 0.10, 0.15)
        restore = _seq(
            "restore_red_box",
            _action("MovePose", **_pose("temporary_pose", dz=0.20)),
            _action("MovePose", **_pose("temporary_pose", dz=0.10)),
            _action("CloseGripper"),
            _action("MovePose", **_pose("temporary_pose", dz=0.20)),
            _action("MovePose", **_pose("red_box", dz=0.20)),
            _action("MovePose", **_pose("red_box", dz=0.11)),
            _action("OpenGripper"),
            _action("MovePose", **_pose("red_box", dz=0.20)),
        )
        return _seq("weigh_occluded_blue_box", relocate, weigh, restore)
    if scenario == "hallucination":
        weigh = _grasp_sequence("measure_bottle_mass", "blue_bottle", 0.10, 0.15)
        pick_missing = _seq(
            "pick_yellow_bottle",
            _action("MovePose", **_pose("yellow_bottle", dz=0.25)),
            _action("OpenGripper"),
            _action("MovePose", **_pose("yellow_bottle", dz=0.10)),
            _action("CloseGripper"),
            _action("MovePose", **_pose("yellow_bottle", dz=0.25)),
        )
        return _seq("measure_and_handover", weigh, pick_missing)
    raise ValueError(f"unknown mock scenario {scenario!r}")


_MOCK_EXPLANATIONS = {
    "height+mass": (
        "The description lacks the table height and the bottle mass. The first "
        "sequence probes straight down over a clear patch of the table and reads "
        "the fingertip pose at contact, which gives the surface height. The second "
        "sequence grasps the bottle, lifts it clear, and weighs it from the "
        "vertical force change, then puts it back."
    ),
    "mass-only": (
        "Only the bottle mass is missing, so the tree grasps the bottle, lifts it "
        "clear of the table, measures the mass from the vertical force change, and "
        "restores it. The table height is already given, so no contact probe is "
        "planned."
    ),
    "friction": (
        "Friction coefficients cannot be measured by a single action, but they can "
        "be derived by the user from the logged forces: the tree weighs the box, "
        "then drags it across the table at constant speed while recording the "
        "tangential force. Dividing the breakaway peak and the sliding plateau by "
        "the measured weight gives the static and dynamic coefficients."
    ),
    "occlusion": (
        "The red box sits on top of the blue box, so the blue box cannot be "
        "grasped directly. The tree moves the red box to the free temporary pose "
        "first, weighs the blue box, and then puts the red box back where it was."
    ),
    "hallucination": (
        "The tree weighs the blue bottle and then picks up the yellow bottle for "
        "the handover part of the request."
    ),
}


def mock_plan(scenario_id, metadata=None) -> PlanDocument:
    """Canned plan document for one of the built-in scenarios.

    "mass-only" accepts a ":<target>" suffix selecting which object to weigh.
    """
    scenario, _, target = scenario_id.partition(":")
    if scenario not in MOCK_SCENARIOS:
        raise ValueError(f"unknown mock scenario {scenario!r}")
    metadata = metadata or []
    detected = [m["name"] for m in metadata if m.get("kind", "object") == "object"]
    if scenario == "hallucination":
        detected = [n for n in detected if n != "yellow_bottle"]
    doc = {
        "explanation": _MOCK_EXPLANATIONS[scenario],
        "detected_objects": detected,
        "tree": _mock_tree(scenario, target or None),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    plan = parse_plan(text)
    return plan


# -- planner clients -----------------------------------------------------------------


class MockPlannerClient:
    """Deterministic stand-in for the remote planner."""

    def __init__(self, scenario_id):
        self.scenario_id = scenario_id

    def request(self, prompt_text, image_ref="", metadata=None):
        plan = mock_plan(self.scenario_id, metadata=metadata)
        return plan.raw


class RemotePlannerClient:
    """Thin HTTP client for a hosted vision-language planner.

    Reads the endpoint and key from REAL2SIM_PLANNER_URL and
    REAL2SIM_PLANNER_KEY.  The response body must be the plan JSON document.
    """

    def __init__(self, endpoint=None, api_key=None, timeout=120.0):
        self.endpoint = endpoint or os.environ.get("REAL2SIM_PLANNER_URL", "")
        self.api_key = api_key or os.environ.get("REAL2SIM_PLANNER_KEY", "")
        self.timeout = timeout
        if not self.endpoint:
            raise PlannerTransportError(
                "remote planner endpoint not configured (REAL2SIM_PLANNER_URL)"
            )

    def request(self, prompt_text, image_ref="", metadata=None):
        payload = {"prompt": prompt_text, "image": image_ref}
        data = json.dumps(payload).encode()
        req = urllib.request.Request(
            self.endpoint, data=data,
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {self.api_key}"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode()
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise PlannerTransportError(f"planner request failed: {exc}") from exc


def request_plan(client, prompt_text, image_ref="", metadata=None, archive_dir=None):
    """Ask the client for a plan; archive the raw response before parsing."""
    raw = client.request(prompt_text, image_ref=image_ref, metadata=metadata)
    if archive_dir is not None:
        os.makedirs(archive_dir, exist_ok=True)
        with open(os.path.join(archive_dir, "plan_raw.json"), "w") as fh:
            fh.write(raw)
    return parse_plan(raw)
