"""Command line entry points: run, validate, replay, print-prompt.

Exit codes: 0 success, 1 configuration error, 2 plan rejected, 3 execution
failure, 4 estimation incomplete.  Machine reports contain no wall-clock
times or filesystem paths, so identical config + seed gives identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from real2sim import bt, estimation, planner, scenegen
from real2sim.actions import ActionRegistry
from real2sim.bt import TickStatus
from real2sim.control import ImpedanceGains
from real2sim.engine import EngineConfig, ExplorationRuntime
from real2sim.kinematics import KinematicChain
from real2sim.world import GroundTruthWorld

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PLAN_REJECTED = 2
EXIT_EXECUTION = 3
EXIT_ESTIMATION = 4

_KIND_TO_PARAMS = {
    "mass": (estimation.PARAM_MASS,),
    "friction": (estimation.PARAM_STATIC_MU, estimation.PARAM_DYNAMIC_MU),
    "surface_height": (estimation.PARAM_HEIGHT,),
    "dimensions": (),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """One scenario run: inputs, planner mode, seeding, and output layout."""

    scene: str
    world: str
    metadata: str
    chain: str
    request: str
    planner: str = "mock:height+mass"
    image: str = ""
    seed: int = 0
    repeats: int = 1
    noise: float | None = None
    out: str = "run_out"
    targets: list | None = None
    height_target: str = ""
    engine: dict = field(default_factory=dict)
    gains: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_yaml(cls, path, overrides=None):
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        doc.setdefault("base_dir", os.path.dirname(os.path.abspath(path)))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("scene", "world", "metadata", "chain", "request"):
            if key not in doc:
                raise ConfigError(f"config missing required key {key!r}")
        cfg = cls(**doc)
        for key, value in (overrides or {}).items():
            if value is not None:
                setattr(cfg, key, value)
        if cfg.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        for key in ("scene", "world", "metadata", "chain"):
            if not os.path.exists(cfg.path(key)):
                raise ConfigError(f"{key} file not found: {cfg.path(key)}")
        if cfg.image and not os.path.exists(cfg.path("image")):
            raise ConfigError(f"image file not found: {cfg.path('image')}")
        return cfg

    def path(self, key):
        value = getattr(self, key)
        if os.path.isabs(value):
            return value
        return os.path.join(self.base_dir, value)

    def public_dict(self):
        """Config echo for the report: no filesystem paths."""
        return {
            "planner": self.planner,
            "seed": self.seed,
            "repeats": self.repeats,
            "noise": self.noise,
            "request": self.request,
            "targets": self.targets,
            "height_target": self.height_target,
            "engine": dict(self.engine),
            "gains": dict(self.gains),
        }


def _dump_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_yaml(path):
    with open(path) as fh:
        return yaml.safe_load(fh)


def _engine_config(cfg: RunConfig) -> EngineConfig:
    kwargs = dict(cfg.engine)
    if cfg.gains:
        gains = ImpedanceGains(**{k: np.asarray(v, dtype=float) if k != "nullspace_stiffness" else float(v)
                                  for k, v in cfg.gains.items()})
        kwargs["gains"] = gains
    return EngineConfig(**kwargs)


def _estimates_payload(per_run, aggregated):
    return {
        "aggregate": [rec.to_dict() for rec in aggregated],
        "per_run": [[rec.to_dict() for rec in run] for run in per_run],
    }


def _aggregate_runs(per_run):
    grouped = {}
    for run in per_run:
        for rec in run:
            grouped.setdefault((rec.target, rec.parameter), []).append(rec)
    out = []
    for key in sorted(grouped):
        out.append(estimation.aggregate(grouped[key]))
    return out


def _phi_covered(phi, aggregated):
    have = {(rec.target, rec.parameter) for rec in aggregated}
    uncovered = []
    for name, kind in sorted(phi):
        params = _KIND_TO_PARAMS.get(kind, ())
        if not params:
            uncovered.append((name, kind))
            continue
        for param in params:
            if (name, param) not in have:
                uncovered.append((name, kind))
                break
    return uncovered


def _report_text(report):
    lines = [f"scenario status: {report['status']}", ""]
    lines.append(f"{'object':<16} {'parameter':<16} {'mean':>12} {'std':>10} {'n':>4}")
    lines.append("-" * 62)
    for rec in report["estimates"]["aggregate"]:
        lines.append(
            f"{rec['target']:<16} {rec['parameter']:<16} "
            f"{rec['mean']:>12.6f} {rec['std']:>10.6f} {rec['n_samples']:>4d}"
        )
    lines += ["", "planner explanation:", report["explanation"], ""]
    if report["guard"]["removals"]:
        lines.append("guard removals:")
        for rem in report["guard"]["removals"]:
            lines.append(f"- {rem['object']}: {rem['reason']} (subtree {rem['subtree']})")
    if report["diagnostics"]:
        lines.append("diagnostics:")
        lines += [f"- {d}" for d in report["diagnostics"]]
    return "\n".join(lines) + "\n"


def cmd_run(args):
    try:
        overrides = {
            "seed": args.seed, "repeats": args.repeats,
            "out": args.out, "planner": args.planner,
        }
        cfg = RunConfig.from_yaml(args.config, overrides)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = cfg.path("out")
    os.makedirs(out_dir, exist_ok=True)

    try:
        scene_text = open(cfg.path("scene")).read()
        scene = scenegen.parse_scene(scene_text)
        metadata = _load_yaml(cfg.path("metadata")) or []
        chain_doc = _load_yaml(cfg.path("chain"))
        chain = KinematicChain.from_dict(chain_doc)
        world_doc = _load_yaml(cfg.path("world"))
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    registry = ActionRegistry(tip_offset=chain.tip_offset)
    phi = planner.missing_parameters(scene, cfg.targets)
    height_target = cfg.height_target
    if not height_target:
        surfaces = sorted(n for n, kind in phi if kind == "surface_height")
        height_target = surfaces[0] if surfaces else "surface"

    engine_cfg = _engine_config(cfg)
    _dump_json(os.path.join(out_dir, "phi.json"), {
        "phi": sorted([list(p) for p in phi]),
        "diagnostics": phi.diagnostics,
        "height_target": height_target,
        "contact_speed": engine_cfg.contact_speed,
        "g": engine_cfg.gravity,
    })
    with open(os.path.join(out_dir, "chain.yaml"), "w") as fh:
        fh.write(open(cfg.path("chain")).read())
    _dump_json(os.path.join(out_dir, "config_echo.json"), cfg.public_dict())

    # plan
    bundle = planner.PromptBundle(
        user_request=cfg.request, sim_description=scene_text,
        image_ref=cfg.image, metadata=metadata,
    )
    try:
        prompt_text, image_ref = planner.compose_prompt(bundle, registry)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with open(os.path.join(out_dir, "prompt.txt"), "w") as fh:
        fh.write(prompt_text)

    if cfg.planner.startswith("mock:"):
        client = planner.MockPlannerClient(cfg.planner.split(":", 1)[1])
    elif cfg.planner == "remote":
        try:
            client = planner.RemotePlannerClient()
        except planner.PlannerTransportError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    else:
        print(f"config error: unknown planner mode {cfg.planner!r}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        plan = planner.request_plan(client, prompt_text, image_ref=image_ref,
                                    metadata=metadata, archive_dir=out_dir)
    except (planner.PlanSchemaError, planner.PlannerTransportError, ValueError) as exc:
        print(f"plan rejected: {exc}", file=sys.stderr)
        return EXIT_PLAN_REJECTED

    violations = planner.validate_plan(plan, registry)
    if violations:
        _dump_json(os.path.join(out_dir, "guard_report.json"),
                   {"violations": violations, "removals": [], "rejected": True})
        print("plan rejected:", file=sys.stderr)
        for v in violations:
            print(f"- {v}", file=sys.stderr)
        return EXIT_PLAN_REJECTED

    plan, guard_report = planner.hallucination_guard(plan, metadata)
    guard_report["violations"] = []
    _dump_json(os.path.join(out_dir, "guard_report.json"), guard_report)
    if plan is None:
        print(f"plan rejected: {guard_report['reason']}", file=sys.stderr)
        return EXIT_PLAN_REJECTED
    _dump_json(os.path.join(out_dir, "plan.json"), plan.to_dict())

    # execute
    tree = bt.from_plan(plan)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.repeats)
    if cfg.noise is not None:
        world_doc.setdefault("params", {})["torque_noise"] = float(cfg.noise)

    per_run = []
    diagnostics = list(phi.diagnostics)
    failed_repeat = None
    for rep in range(cfg.repeats):
        world = GroundTruthWorld.from_dict(world_doc, chain=chain, seed=seeds[rep])
        runtime = ExplorationRuntime(world, metadata, config=engine_cfg, registry=registry)
        status = runtime.run_tree(tree)
        rep_dir = os.path.join(out_dir, f"repeat_{rep:02d}")
        runtime.write_logs(rep_dir)
        if status is not TickStatus.Success:
            fault = world.fault or "behavior tree returned Failure"
            diagnostics.append(f"repeat {rep}: execution failed: {fault}")
            failed_repeat = rep
            break
        per_run.append(
            estimation.estimates_from_logs(
                runtime.records, runtime.trace, chain, g=engine_cfg.gravity,
                contact_speed=engine_cfg.contact_speed, height_target=height_target,
                diagnostics=diagnostics,
            )
        )

    aggregated = _aggregate_runs(per_run)
    uncovered = _phi_covered(phi, aggregated)
    status = "ok"
    exit_code = EXIT_OK
    if failed_repeat is not None:
        status = "execution_failure"
        exit_code = EXIT_EXECUTION
    elif uncovered:
        status = "estimation_incomplete"
        exit_code = EXIT_ESTIMATION
        diagnostics.append(
            "uncovered parameters: " + ", ".join(f"({n}, {k})" for n, k in uncovered)
        )

    report = {
        "status": status,
        "config": cfg.public_dict(),
        "phi": sorted([list(p) for p in phi]),
        "explanation": plan.explanation,
        "guard": {"removals": guard_report["removals"], "rejected": False},
        "estimates": _estimates_payload(per_run, aggregated),
        "diagnostics": diagnostics,
    }
    _dump_json(os.path.join(out_dir, "report.json"), report)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(_report_text(report))

    if exit_code == EXIT_OK:
        try:
            merged = scenegen.merge_estimates(scene, aggregated)
            with open(os.path.join(out_dir, "completed_scene.xml"), "w") as fh:
                fh.write(scenegen.emit_xml(merged))
        except ValueError as exc:
            print(f"estimation incomplete: {exc}", file=sys.stderr)
            return EXIT_ESTIMATION
    print(_report_text(report), end="")
    return exit_code


def cmd_validate(args):
    try:
        plan_text = open(args.plan).read()
        metadata = _load_yaml(args.metadata) or []
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    registry = ActionRegistry()
    try:
        plan = planner.parse_plan(plan_text)
    except planner.PlanSchemaError as exc:
        print(f"plan rejected: {exc}", file=sys.stderr)
        return EXIT_PLAN_REJECTED
    violations = planner.validate_plan(plan, registry)
    if violations:
        print("plan rejected:", file=sys.stderr)
        for v in violations:
            print(f"- {v}", file=sys.stderr)
        return EXIT_PLAN_REJECTED
    filtered, report = planner.hallucination_guard(plan, metadata)
    print(json.dumps({"violations": [], "removals": report["removals"],
                      "rejected": report["rejected"], "reason": report["reason"]},
                     indent=2, sort_keys=True))
    return EXIT_PLAN_REJECTED if filtered is None else EXIT_OK


def cmd_replay(args):
    run_dir = args.run_dir
    try:
        chain = KinematicChain.from_dict(_load_yaml(os.path.join(run_dir, "chain.yaml")))
        phi_doc = json.load(open(os.path.join(run_dir, "phi.json")))
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: not a run directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    repeat_dirs = sorted(
        d for d in os.listdir(run_dir)
        if d.startswith("repeat_") and os.path.isdir(os.path.join(run_dir, d))
    )
    per_run = []
    diagnostics = []
    for rep in repeat_dirs:
        try:
            records = [json.loads(line) for line in open(os.path.join(run_dir, rep, "sensors.jsonl"))]
            trace = [json.loads(line) for line in open(os.path.join(run_dir, rep, "trace.jsonl"))]
        except (OSError, json.JSONDecodeError) as exc:
            diagnostics.append(f"{rep}: unreadable or truncated log: {exc}")
            continue
        per_run.append(
            estimation.estimates_from_logs(
                records, trace, chain, g=phi_doc.get("g", estimation.GRAVITY),
                contact_speed=phi_doc.get("contact_speed", 0.02),
                height_target=phi_doc.get("height_target", "surface"),
                diagnostics=diagnostics,
            )
        )

    aggregated = _aggregate_runs(per_run)
    payload = {
        "estimates": _estimates_payload(per_run, aggregated),
        "diagnostics": diagnostics,
    }
    out_path = os.path.join(run_dir, "replay_report.json")
    _dump_json(out_path, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    if not per_run or diagnostics:
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_print_prompt(args):
    try:
        cfg = RunConfig.from_yaml(args.config, {})
        scene_text = open(cfg.path("scene")).read()
        metadata = _load_yaml(cfg.path("metadata")) or []
        chain = KinematicChain.from_dict(_load_yaml(cfg.path("chain")))
    except (ConfigError, OSError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    registry = ActionRegistry(tip_offset=chain.tip_offset)
    bundle = planner.PromptBundle(
        user_request=cfg.request, sim_description=scene_text,
        image_ref=cfg.image, metadata=metadata,
    )
    try:
        text, _ = planner.compose_prompt(bundle, registry)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(text, end="" if text.endswith("\n") else "\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="real2sim",
        description="Estimate missing physical parameters by simulated robot exploration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario end to end")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--repeats", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--planner", default=None)
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a plan file against the action registry")
    p_val.add_argument("--plan", required=True)
    p_val.add_argument("--metadata", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_rep = sub.add_parser("replay", help="recompute estimates from archived run logs")
    p_rep.add_argument("--run-dir", required=True)
    p_rep.set_defaults(func=cmd_replay)

    p_pp = sub.add_parser("print-prompt", help="compose and print the planner prompt")
    p_pp.add_argument("--config", required=True)
    p_pp.set_defaults(func=cmd_print_prompt)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
