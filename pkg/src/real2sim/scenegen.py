"""Incomplete scene descriptions: parse, merge estimates, emit completed XML.

Supported subset: a <scene> root with <body> children carrying <geom> and
<inertial>.  Surfaces are bodies with role="surface"; their height is the
body z-position, with the body origin placed at the surface top (lateral
placement lives on the geom).  Anything outside the subset passes through
verbatim so user files survive a round trip.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from real2sim.estimation import (
    PARAM_DYNAMIC_MU,
    PARAM_HEIGHT,
    PARAM_MASS,
    PARAM_STATIC_MU,
)

_BODY_ATTR_ORDER = ("name", "role", "pos")
_GEOM_ATTR_ORDER = ("type", "size", "pos", "friction")
_INERTIAL_ATTR_ORDER = ("mass",)


@dataclass
class Body:
    """One scene body; raw attribute strings are kept so given values never change."""

    name: str
    attrs: dict = field(default_factory=dict)
    geom: dict | None = None
    inertial: dict | None = None
    extra: list = field(default_factory=list)  # verbatim child elements/comments

    @property
    def role(self):
        return self.attrs.get("role", "object")

    @property
    def pose(self):
        pos = self.attrs.get("pos")
        return None if pos is None else tuple(float(v) for v in pos.split())

    @property
    def height(self):
        pose = self.pose
        return None if pose is None else pose[2]

    @property
    def mass(self):
        if self.inertial is None or "mass" not in self.inertial:
            return None
        return float(self.inertial["mass"])

    @property
    def friction(self):
        if self.geom is None or "friction" not in self.geom:
            return None
        vals = tuple(float(v) for v in self.geom["friction"].split())
        return vals

    @property
    def size(self):
        if self.geom is None or "size" not in self.geom:
            return None
        return tuple(float(v) for v in self.geom["size"].split())

    def missing(self):
        """(kind, ...) attributes this body still lacks."""
        if self.role == "surface":
            return ("surface_height",) if self.height is None else ()
        out = []
        if self.mass is None:
            out.append("mass")
        if self.friction is None:
            out.append("friction")
        if self.size is None:
            out.append("dimensions")
        return tuple(out)


@dataclass
class SceneDescription:
    """Parsed scene: bodies plus everything preserved verbatim."""

    name: str = "scene"
    attrs: dict = field(default_factory=dict)
    bodies: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    source: str = ""
    request: str = ""
    complete: bool = False

    def body(self, name):
        for b in self.bodies:
            if b.name == name:
                return b
        return None

    def missing_slots(self):
        return {(b.name, kind) for b in self.bodies for kind in b.missing()}


def _check_positive(name, label, values):
    if any(v <= 0.0 for v in values):
        raise ValueError(f"body {name!r}: {label} must be positive")


def _parse_body(elem):
    name = elem.get("name")
    if not name:
        raise ValueError("body without a name attribute")
    body = Body(name=name, attrs=dict(elem.attrib))
    for child in elem:
        if not isinstance(child.tag, str):  # comment or processing instruction
            body.extra.append(child)
        elif child.tag == "geom" and body.geom is None:
            body.geom = dict(child.attrib)
        elif child.tag == "inertial" and body.inertial is None:
            body.inertial = dict(child.attrib)
        else:
            body.extra.append(child)
    if body.mass is not None:
        _check_positive(name, "mass", (body.mass,))
    if body.size is not None:
        _check_positive(name, "size", body.size)
    if body.friction is not None:
        if len(body.friction) != 2:
            raise ValueError(f"body {name!r}: friction must carry two values")
        if any(v < 0.0 for v in body.friction):
            raise ValueError(f"body {name!r}: friction must be non-negative")
    return body


def parse_scene(xml_text) -> SceneDescription:
    """Parse a scene file; absent attributes stay missing, never defaulted."""
    parser = ET.XMLParser(target=ET.TreeBuilder(insert_comments=True))
    try:
        root = ET.fromstring(xml_text, parser=parser)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ValueError(f"malformed scene XML at line {line}, column {col}: {exc.msg}") from exc
    if root.tag != "scene":
        raise ValueError(f"unsupported root element <{root.tag}>; expected <scene>")
    scene = SceneDescription(
        name=root.get("name", "scene"),
        attrs=dict(root.attrib),
        source=xml_text,
        request=root.get("request", ""),
    )
    seen = set()
    for child in root:
        if isinstance(child.tag, str) and child.tag == "body":
            body = _parse_body(child)
            if body.name in seen:
                raise ValueError(f"duplicate body name {body.name!r}")
            seen.add(body.name)
            scene.bodies.append(body)
        else:
            if isinstance(child.tag, str):
                scene.warnings.append(f"unsupported element <{child.tag}> preserved verbatim")
            scene.extra.append(child)
    return scene


def _fmt(value):
    return repr(float(value))


def _provenance_comment(parameter, record):
    return (
        f" estimated {parameter}={_fmt(record.mean)} std={_fmt(record.std)}"
        f" n={record.n_samples} source={record.source or 'unknown'} "
    )


def merge_estimates(scene: SceneDescription, estimates) -> SceneDescription:
    """Fill every missing slot of the scene from the estimate records.

    Raises ValueError when a missing slot has no covering estimate; estimates
    aimed at complete or unknown bodies are ignored with a warning.  Given
    attribute strings are carried over untouched.
    """
    by_key = {}
    for rec in estimates:
        by_key.setdefault((rec.target, rec.parameter), rec)

    merged = SceneDescription(
        name=scene.name,
        attrs=dict(scene.attrs),
        extra=list(scene.extra),
        warnings=list(scene.warnings),
        source=scene.source,
        request=scene.request,
        complete=True,
    )
    uncovered = []
    used = set()
    for body in scene.bodies:
        out = Body(
            name=body.name,
            attrs=dict(body.attrs),
            geom=None if body.geom is None else dict(body.geom),
            inertial=None if body.inertial is None else dict(body.inertial),
            extra=list(body.extra),
        )
        for kind in body.missing():
            if kind == "mass":
                rec = by_key.get((body.name, PARAM_MASS))
                if rec is None:
                    uncovered.append((body.name, kind))
                    continue
                used.add((body.name, PARAM_MASS))
                if out.inertial is None:
                    out.inertial = {}
                out.inertial["mass"] = _fmt(rec.mean)
                out.extra.append(ET.Comment(_provenance_comment("mass", rec)))
            elif kind == "friction":
                s = by_key.get((body.name, PARAM_STATIC_MU))
                d = by_key.get((body.name, PARAM_DYNAMIC_MU))
                if s is None or d is None:
                    uncovered.append((body.name, kind))
                    continue
                used.update({(body.name, PARAM_STATIC_MU), (body.name, PARAM_DYNAMIC_MU)})
                if out.geom is None:
                    out.geom = {}
                out.geom["friction"] = f"{_fmt(s.mean)} {_fmt(d.mean)}"
                out.extra.append(ET.Comment(_provenance_comment("static_mu", s)))
                out.extra.append(ET.Comment(_provenance_comment("dynamic_mu", d)))
            elif kind == "surface_height":
                rec = by_key.get((body.name, PARAM_HEIGHT))
                if rec is None:
                    uncovered.append((body.name, kind))
                    continue
                used.add((body.name, PARAM_HEIGHT))
                out.attrs["pos"] = f"0 0 {_fmt(rec.mean)}"
                out.extra.append(ET.Comment(_provenance_comment("surface_height", rec)))
            else:  # dimensions: no estimator produces these
                uncovered.append((body.name, kind))
        merged.bodies.append(out)

    if uncovered:
        slots = ", ".join(f"({name}, {kind})" for name, kind in sorted(uncovered))
        raise ValueError(f"missing estimates for: {slots}")

    body_names = {b.name for b in scene.bodies}
    for key, rec in by_key.items():
        if key in used:
            continue
        if key[0] not in body_names:
            merged.warnings.append(f"estimate for unknown body {key[0]!r} ignored")
        else:
            merged.warnings.append(
                f"estimate {key[1]} for {key[0]!r} ignored: value already given"
            )
    return merged


def _attr_string(attrs, order):
    keys = [k for k in order if k in attrs] + sorted(k for k in attrs if k not in order)
    return "".join(f' {k}="{attrs[k]}"' for k in keys)


def _emit_element(elem, indent):
    text = ET.tostring(elem, encoding="unicode").strip()
    return "\n".join(indent + line for line in text.splitlines())


def emit_xml(scene: SceneDescription) -> str:
    """Deterministic scene serialization; parse(emit(s)) reproduces s."""
    lines = [f"<scene{_attr_string(scene.attrs, ('name',))}>"]
    for body in scene.bodies:
        lines.append(f"  <body{_attr_string(body.attrs, _BODY_ATTR_ORDER)}>")
        if body.geom is not None:
            lines.append(f"    <geom{_attr_string(body.geom, _GEOM_ATTR_ORDER)}/>")
        if body.inertial is not None:
            lines.append(f"    <inertial{_attr_string(body.inertial, _INERTIAL_ATTR_ORDER)}/>")
        for extra in body.extra:
            lines.append(_emit_element(extra, "    "))
        lines.append("  </body>")
    for extra in scene.extra:
        lines.append(_emit_element(extra, "  "))
    lines.append("</scene>")
    return "\n".join(lines) + "\n"
