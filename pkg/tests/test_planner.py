"""Prompt composition, plan schema, object guard, and required-parameter discovery."""

import json
import os

import pytest

from real2sim import planner
from real2sim.actions import ActionRegistry
from real2sim.scenegen import parse_scene
from tests.conftest import fixture_path

REGISTRY = ActionRegistry(tip_offset=0.10)

METADATA = [
    {"name": "blue_bottle", "kind": "object", "pose": [0.42, 0.12, 0.865]},
    {"name": "table", "kind": "surface", "pose": [0.42, -0.18, 0.82]},
]


def bundle(request="Weigh the blue bottle.", metadata=METADATA, **kw):
    return planner.PromptBundle(user_request=request, metadata=metadata, **kw)


def read_fixture(*parts):
    with open(fixture_path(*parts)) as fh:
        return fh.read()


# -- prompt -------------------------------------------------------------------


def test_prompt_matches_golden_snapshot():
    text, _ = planner.compose_prompt(
        bundle(sim_description=read_fixture("scenario1", "scene_d.xml")), REGISTRY
    )
    assert text == read_fixture("golden_prompt.txt")


def test_prompt_has_no_unfilled_placeholders():
    text, _ = planner.compose_prompt(bundle(), REGISTRY)
    for ph in ("{OBJECT_METADATA}", "{ACTION_LIST}", "{SIM_DESCRIPTION}", "{USER_REQUEST}"):
        assert ph not in text
    assert "Weigh the blue bottle." in text
    for action in REGISTRY.names():
        assert action in text
    assert "blue_bottle" in text


def test_prompt_requires_request():
    with pytest.raises(ValueError):
        planner.compose_prompt(bundle(request="   "), REGISTRY)


def test_prompt_rejects_duplicate_metadata_names():
    meta = METADATA + [{"name": "blue_bottle", "kind": "object", "pose": [0, 0, 0]}]
    with pytest.raises(ValueError):
        planner.compose_prompt(bundle(metadata=meta), REGISTRY)


def test_prompt_rejects_template_without_placeholders():
    with pytest.raises(ValueError):
        planner.compose_prompt(bundle(system_template="hello"), REGISTRY)


def test_prompt_passes_image_ref_through():
    _, image = planner.compose_prompt(bundle(image_ref="frame_000.png"), REGISTRY)
    assert image == "frame_000.png"


# -- plan parsing ---------------------------------------------------------------


def plan_doc(tree, detected=("blue_bottle",)):
    return json.dumps(
        {"explanation": "why", "detected_objects": list(detected), "tree": tree}
    )


GOOD_TREE = {
    "type": "Sequence",
    "name": "weigh",
    "children": [
        {"type": "Action", "name": "MovePose",
         "args": {"pose": {"ref": "blue_bottle", "offset": [0, 0, 0.25]}}},
        {"type": "Action", "name": "CloseGripper"},
    ],
}


def test_parse_plan_accepts_valid_document():
    plan = planner.parse_plan(plan_doc(GOOD_TREE))
    assert plan.explanation == "why"
    assert plan.detected_objects == ["blue_bottle"]
    assert not plan.validated


@pytest.mark.parametrize(
    "text",
    [
        "not json at all",
        json.dumps(["a", "list"]),
        json.dumps({"detected_objects": [], "tree": GOOD_TREE}),
        json.dumps({"explanation": " ", "detected_objects": [], "tree": GOOD_TREE}),
        json.dumps({"explanation": "x", "detected_objects": "bottle", "tree": GOOD_TREE}),
        plan_doc({"type": "Loop", "name": "x"}),
        plan_doc({"type": "Action", "name": ""}),
        plan_doc({"type": "Sequence", "name": "s", "children": []}),
        plan_doc({"type": "Action", "name": "MovePose",
                  "children": [{"type": "Action", "name": "CloseGripper"}]}),
        plan_doc({"type": "Action", "name": "MovePose", "args": "pose"}),
    ],
)
def test_parse_plan_rejects_malformed(text):
    with pytest.raises(planner.PlanSchemaError):
        planner.parse_plan(text)


# -- validation -------------------------------------------------------------------


def test_validate_plan_marks_valid():
    plan = planner.parse_plan(plan_doc(GOOD_TREE))
    assert planner.validate_plan(plan, REGISTRY) == []
    assert plan.validated


@pytest.mark.parametrize(
    "tree,needle",
    [
        ({"type": "Action", "name": "Teleport"}, "unknown action"),
        ({"type": "Action", "name": "MovePose"}, "pose argument"),
        ({"type": "Action", "name": "MovePose", "args": {"pose": [1, 2]}}, "pose argument"),
        ({"type": "Action", "name": "MovePose", "args": {"pose": {"offset": [0, 0, 0]}}},
         "pose argument"),
        ({"type": "Action", "name": "MoveJoints", "args": {"joints": "up"}}, "joints"),
        ({"type": "Action", "name": "OpenGripper", "args": {"width": 0.1}}, "no arguments"),
    ],
)
def test_validate_plan_reports_violations(tree, needle):
    plan = planner.parse_plan(plan_doc(tree))
    violations = planner.validate_plan(plan, REGISTRY)
    assert violations and needle in violations[0]
    assert not plan.validated


# -- object guard -------------------------------------------------------------------


def guarded(tree, metadata, detected):
    plan = planner.parse_plan(plan_doc(tree, detected=detected))
    return planner.hallucination_guard(plan, metadata)


TWO_PART_TREE = {
    "type": "Sequence",
    "name": "root",
    "children": [
        {"type": "Sequence", "name": "weigh_blue", "children": [
            {"type": "Action", "name": "MovePose",
             "args": {"pose": {"ref": "blue_bottle", "offset": [0, 0, 0.2]}}},
        ]},
        {"type": "Sequence", "name": "pick_yellow", "children": [
            {"type": "Action", "name": "MovePose",
             "args": {"pose": {"ref": "yellow_bottle", "offset": [0, 0, 0.2]}}},
        ]},
    ],
}


def test_guard_removes_reference_missing_from_metadata():
    plan, report = guarded(TWO_PART_TREE, METADATA, ["blue_bottle", "yellow_bottle"])
    assert [c["name"] for c in plan.tree["children"]] == ["weigh_blue"]
    assert report["removals"] == [
        {"object": "yellow_bottle", "reason": "pose unavailable in metadata",
         "subtree": "pick_yellow"}
    ]


def test_guard_removes_object_missing_from_detection():
    meta = METADATA + [{"name": "yellow_bottle", "kind": "object", "pose": [0.3, -0.1, 0.865]}]
    plan, report = guarded(TWO_PART_TREE, meta, ["blue_bottle"])
    assert [c["name"] for c in plan.tree["children"]] == ["weigh_blue"]
    assert report["removals"][0]["object"] == "yellow_bottle"
    assert report["removals"][0]["reason"] == "not in detected objects"


def test_guard_keeps_named_locations_without_detection():
    meta = METADATA + [{"name": "staging_area", "kind": "location", "pose": [0.6, -0.1, 0.75]}]
    tree = {"type": "Sequence", "name": "root", "children": [
        {"type": "Action", "name": "MovePose",
         "args": {"pose": {"ref": "staging_area", "offset": [0, 0, 0.1]}}},
    ]}
    plan, report = guarded(tree, meta, ["blue_bottle"])
    assert plan is not None and not report["removals"]


def test_guard_rejects_plan_with_nothing_left():
    tree = {"type": "Sequence", "name": "root", "children": [
        {"type": "Action", "name": "MovePose", "args": {"pose": {"ref": "ghost"}}},
    ]}
    plan, report = guarded(tree, METADATA, ["ghost"])
    assert plan is None
    assert report["rejected"]
    assert report["removals"][0]["object"] == "ghost"


def test_guard_passes_clean_plan_unchanged():
    plan = planner.parse_plan(plan_doc(TWO_PART_TREE))
    meta = METADATA + [{"name": "yellow_bottle", "kind": "object", "pose": [0.3, -0.1, 0.865]}]
    out, report = planner.hallucination_guard(plan, meta,
                                              detected_objects=["blue_bottle", "yellow_bottle"])
    assert len(out.tree["children"]) == 2
    assert not report["removals"]


# -- required parameters ---------------------------------------------------------


def phi_for(scene_file):
    scene = parse_scene(read_fixture(*scene_file))
    return set(planner.missing_parameters(scene).phi)


def test_missing_parameters_unknown_height_and_mass():
    assert phi_for(("scenario1", "scene_d.xml")) == {
        ("table", "surface_height"), ("blue_bottle", "mass"),
    }


def test_missing_parameters_mass_only():
    assert phi_for(("scenario1_known", "scene_d.xml")) == {("blue_bottle", "mass")}


def test_missing_parameters_mass_and_friction():
    assert phi_for(("scenario2", "scene_d.xml")) == {("box", "mass"), ("box", "friction")}


def test_missing_parameters_reports_unknown_targets():
    scene = parse_scene(read_fixture("scenario1", "scene_d.xml"))
    req = planner.missing_parameters(scene, request_targets=["ghost"])
    assert len(req) == 0
    assert req.diagnostics == ["unknown object: ghost"]


# -- mock and remote clients --------------------------------------------------------


def test_mock_plans_validate_for_all_scenarios():
    meta = METADATA + [
        {"name": "box", "kind": "object", "pose": [0.42, 0.1, 0.78]},
        {"name": "green_bottle", "kind": "object", "pose": [0.42, 0.1, 0.85]},
        {"name": "blue_box", "kind": "object", "pose": [0.4, 0.05, 0.755]},
        {"name": "red_box", "kind": "object", "pose": [0.4, 0.05, 0.815]},
        {"name": "temporary_pose", "kind": "location", "pose": [0.58, -0.12, 0.745]},
    ]
    for scenario in ("height+mass", "mass-only:green_bottle", "friction",
                     "occlusion", "hallucination"):
        plan = planner.mock_plan(scenario, metadata=meta)
        assert planner.validate_plan(plan, REGISTRY) == [], scenario
        assert plan.explanation


def test_mock_plan_unknown_scenario():
    with pytest.raises(ValueError):
        planner.mock_plan("teleportation")


def test_mock_hallucination_detection_omits_yellow():
    meta = METADATA + [{"name": "yellow_bottle", "kind": "object", "pose": [0.3, -0.1, 0.865]}]
    plan = planner.mock_plan("hallucination", metadata=meta)
    assert "yellow_bottle" not in plan.detected_objects


def test_request_plan_archives_raw_response(tmp_path):
    client = planner.MockPlannerClient("mass-only:blue_bottle")
    plan = planner.request_plan(client, "prompt", metadata=METADATA,
                                archive_dir=str(tmp_path))
    raw = (tmp_path / "plan_raw.json").read_text()
    assert raw == plan.raw
    json.loads(raw)


def test_remote_client_requires_endpoint(monkeypatch):
    monkeypatch.delenv("REAL2SIM_PLANNER_URL", raising=False)
    with pytest.raises(planner.PlannerTransportError):
        planner.RemotePlannerClient()


def test_remote_client_wraps_connection_errors():
    client = planner.RemotePlannerClient(endpoint="http://127.0.0.1:9/plan", timeout=0.5)
    with pytest.raises(planner.PlannerTransportError):
        client.request("prompt")
