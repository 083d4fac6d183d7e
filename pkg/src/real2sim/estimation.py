"""Parameter estimators over logged sensor series.

Every estimator consumes only logged/blackboard data (joint angles, sensed
external torques, tool poses, trace spans); none of them touches the
simulator.  The same entry point serves the live pipeline and offline replay,
which is what makes replayed estimates bit-identical to the original run.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from real2sim.kinematics import KinematicChain, Wrench, wrench_from_torques

GRAVITY = 9.81

PARAM_MASS = "mass"
PARAM_STATIC_MU = "static_mu"
PARAM_DYNAMIC_MU = "dynamic_mu"
PARAM_HEIGHT = "surface_height"
PARAMETERS = (PARAM_MASS, PARAM_STATIC_MU, PARAM_DYNAMIC_MU, PARAM_HEIGHT)

# leaf names that delimit measurement spans in an execution trace
_ATOMIC = {
    "MovePose", "MoveJoints", "OpenGripper", "CloseGripper",
    "MoveDownUntilContact", "MeasureGripperPose", "MeasureForces", "MeasureMass",
}


@dataclass
class EstimateRecord:
    """One estimated parameter with its dispersion and provenance."""

    parameter: str
    target: str
    mean: float
    std: float
    n_samples: int
    source: str = ""

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.std < 0.0:
            raise ValueError("std must be >= 0")

    def to_dict(self):
        return {
            "parameter": self.parameter,
            "target": self.target,
            "mean": self.mean,
            "std": self.std,
            "n_samples": self.n_samples,
            "source": self.source,
        }


@dataclass
class PushTrace:
    """Per-tick series logged while dragging an object across a surface."""

    t: np.ndarray
    f_par: np.ndarray  # tangential (lateral) force magnitude, N
    f_vert: np.ndarray  # sensed vertical tool force, N
    v_cmd: np.ndarray  # commanded lateral speed, m/s
    v_act: np.ndarray  # lateral tool speed from logged poses, m/s
    target: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.f_par = np.asarray(self.f_par, dtype=float)
        self.f_vert = np.asarray(self.f_vert, dtype=float)
        self.v_cmd = np.asarray(self.v_cmd, dtype=float)
        self.v_act = np.asarray(self.v_act, dtype=float)
        if self.f_par.size == 0:
            raise ValueError("push trace is empty")
        if not (np.all(np.isfinite(self.f_par)) and np.all(np.isfinite(self.f_vert))):
            raise ValueError("push trace contains non-finite forces")

    def __len__(self):
        return self.f_par.size


def _as_wrench_vector(w):
    if isinstance(w, Wrench):
        return w.as_vector()
    return np.asarray(w, dtype=float)


def _sample_std(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def estimate_mass(hold_series, bias, g=GRAVITY, target="", source=""):
    """Payload mass from the vertical force drop between empty and loaded holds."""
    if g <= 0.0:
        raise ValueError("g must be positive")
    series = [_as_wrench_vector(w) for w in hold_series]
    if not series:
        raise ValueError("empty hold series")
    bias_z = _as_wrench_vector(bias)[2]
    masses = np.array([(bias_z - w[2]) / g for w in series])
    return EstimateRecord(
        parameter=PARAM_MASS,
        target=target,
        mean=float(np.mean(masses)),
        std=_sample_std(masses),
        n_samples=masses.size,
        source=source,
    )


def _motion_onset(trace: PushTrace):
    """First and last tick with real lateral motion.

    Logged poses are exact, so the threshold only has to sit above the
    numerical drift of the posture loop (~1e-5 m/s) and far below the
    commanded speed; 1% of the command satisfies both by orders of
    magnitude.
    """
    moving = (trace.v_cmd > 0.0) & (trace.v_act >= 0.01 * trace.v_cmd)
    idx = np.nonzero(moving)[0]
    return (int(idx[0]), int(idx[-1])) if idx.size else (None, None)


def _normal_window(normal, lo, hi, load):
    """Mean sensed normal load over [lo, hi); rejects vanished contact."""
    value = float(np.mean(normal[lo:hi]))
    if value <= 0.1 * load:
        raise ValueError("normal load vanished during push")
    return value


def estimate_friction(trace: PushTrace, mass: EstimateRecord, g=GRAVITY, diagnostics=None):
    """Static and dynamic Coulomb coefficients from one push trace.

    During stick the tool is pinned, so motion onset in the logged poses
    brackets the breakaway tick to within one sample.  Between onset and the
    point where the lateral speed reaches half the commanded speed the
    contact rides the static bound, so the mean tangential force over that
    transient window is the breakaway peak.  The dynamic coefficient is the
    mean tangential force over the second half of the sliding segment,
    excluding the final in-motion sample (the contact may re-stick there).
    Each window is normalized by the sensed normal load over the same ticks
    (vertical tool force plus the payload weight), which cancels any extra
    vertical load the robot applies; a large vertical load is still flagged
    since it shifts the normal force away from the plain m*g regime.
    """
    if diagnostics is None:
        diagnostics = []
    if mass.mean <= 0.0:
        raise ValueError("mass estimate must be positive for friction estimation")
    if g <= 0.0:
        raise ValueError("g must be positive")
    load = mass.mean * g
    normal = trace.f_vert + load

    first, last = _motion_onset(trace)
    if first is None:
        diagnostics.append("no breakaway detected: whole trace used for both segments")
        denom = _normal_window(normal, 0, len(trace), load)
        mean = float(np.mean(trace.f_par)) / denom
        std = _sample_std(trace.f_par) / denom
        static = EstimateRecord(PARAM_STATIC_MU, trace.target, mean, std, len(trace))
        dynamic = EstimateRecord(PARAM_DYNAMIC_MU, trace.target, mean, std, len(trace))
        if float(np.mean(np.abs(trace.f_vert))) > 0.1 * load:
            diagnostics.append(
                "vertical tool load exceeds 10% of m*g during push: "
                "normal-load assumption degraded"
            )
        return static, dynamic

    if first == 0:
        diagnostics.append("no stick phase before breakaway")
    pre_lo = max(first - 1, 0)
    established = np.nonzero((trace.v_cmd > 0.0) & (trace.v_act >= 0.5 * trace.v_cmd))[0]
    if established.size == 0:
        diagnostics.append("breakaway never completed: dynamic estimate absent")
        denom = _normal_window(normal, pre_lo, pre_lo + 1, load)
        static = EstimateRecord(
            PARAM_STATIC_MU, trace.target, float(trace.f_par[pre_lo]) / denom, 0.0, 1
        )
        return static, None

    slide_lo = int(established[0])
    pre_hi = max(slide_lo - 1, pre_lo + 1)
    peak_window = trace.f_par[pre_lo:pre_hi]
    peak_denom = _normal_window(normal, pre_lo, pre_hi, load)

    plateau_lo = slide_lo + (last + 1 - slide_lo) // 2
    plateau_hi = last if last > plateau_lo else last + 1
    plateau = trace.f_par[plateau_lo:plateau_hi]
    plateau_denom = _normal_window(normal, plateau_lo, plateau_hi, load)
    dynamic = EstimateRecord(
        parameter=PARAM_DYNAMIC_MU,
        target=trace.target,
        mean=float(np.mean(plateau)) / plateau_denom,
        std=_sample_std(plateau) / plateau_denom,
        n_samples=plateau.size,
        source="",
    )
    vert = np.abs(trace.f_vert[plateau_lo:plateau_hi])
    if float(np.mean(vert)) > 0.1 * load:
        diagnostics.append(
            "vertical tool load exceeds 10% of m*g during slide: "
            "normal-load assumption degraded"
        )

    mu_s = float(np.mean(peak_window)) / peak_denom
    if mu_s < dynamic.mean:
        mu_s = dynamic.mean
    static = EstimateRecord(
        parameter=PARAM_STATIC_MU,
        target=trace.target,
        mean=mu_s,
        std=_sample_std(peak_window) / peak_denom,
        n_samples=peak_window.size,
        source="",
    )
    return static, dynamic


def estimate_surface_height(contact_pose, d_offset, target="surface", source=""):
    """Surface height from the tool z at contact minus the fingertip offset."""
    if contact_pose is None:
        raise ValueError("missing contact record")
    if isinstance(contact_pose, dict):
        z = float(contact_pose["pos"][2])
    else:
        z = float(np.asarray(contact_pose, dtype=float)[2])
    return EstimateRecord(
        parameter=PARAM_HEIGHT,
        target=target,
        mean=z - float(d_offset),
        std=0.0,
        n_samples=1,
        source=source,
    )


def aggregate(records):
    """Pool per-run records of one (parameter, target) into a single record."""
    records = list(records)
    if not records:
        raise ValueError("nothing to aggregate")
    key = (records[0].parameter, records[0].target)
    if any((r.parameter, r.target) != key for r in records):
        raise ValueError("mixed parameters in aggregate")
    means = [r.mean for r in records]
    return EstimateRecord(
        parameter=key[0],
        target=key[1],
        mean=float(np.mean(means)),
        std=_sample_std(means),
        n_samples=len(records),
        source=records[0].source,
    )


# -- log-driven estimation (shared by live runs and replay) --------------------


def spans_from_trace(trace):
    """Action leaf spans [(path, name, t0, t1, status)] from a trace log."""
    opened = {}
    spans = []
    for ev in trace:
        path = ev["path"]
        name = path.rsplit("/", 1)[-1].split(":", 1)[-1]
        if name not in _ATOMIC:
            continue
        if ev["event"] == "enter":
            opened[path] = ev["t"]
        elif ev["event"] == "exit" and path in opened:
            spans.append(
                {"path": path, "name": name, "t0": opened.pop(path),
                 "t1": ev["t"], "status": ev["status"]}
            )
    spans.sort(key=lambda s: s["t0"])
    return spans


def recover_wrench_series(chain: KinematicChain, records):
    """Tool wrenches recovered from each record's (q, sensed torques)."""
    out = np.empty((len(records), 6))
    for i, rec in enumerate(records):
        _, jac = chain.fk_jac(np.asarray(rec["q"], dtype=float))
        w, _ = wrench_from_torques(jac, np.asarray(rec["tau_ext"], dtype=float))
        out[i] = w.as_vector()
    return out


def _span_slice(times, span):
    lo = bisect.bisect_left(times, span["t0"])
    hi = bisect.bisect_left(times, span["t1"])
    return lo, hi


def estimates_from_logs(records, trace, chain: KinematicChain, g=GRAVITY,
                        contact_speed=0.02, height_target="surface",
                        min_push=0.03, diagnostics=None):
    """All parameter estimates derivable from one run's sensor + trace logs."""
    if diagnostics is None:
        diagnostics = []
    estimates = []
    spans = spans_from_trace(trace)
    times = [rec["t"] for rec in records]

    # force bias windows: the empty-gripper hold at the start of each grasp
    biases = []  # (t_end, bias 6-vec)
    for span in spans:
        if span["name"] != "CloseGripper" or span["status"] != "Success":
            continue
        lo, hi = _span_slice(times, span)
        empty = [r for r in records[lo:hi] if not r["gripper"]["closed"]]
        if not empty:
            diagnostics.append(f"grasp at t={span['t0']:.3f} has no bias window")
            continue
        biases.append((span["t1"], np.mean(recover_wrench_series(chain, empty), axis=0)))

    mass_records = {}
    for span in spans:
        if span["name"] != "MeasureMass" or span["status"] != "Success":
            continue
        lo, hi = _span_slice(times, span)
        window = records[lo:hi]
        if not window:
            diagnostics.append(f"empty measure-mass span at t={span['t0']:.3f}")
            continue
        held = window[0]["gripper"]["held"]
        if held is None:
            diagnostics.append(f"measure-mass span at t={span['t0']:.3f} with empty gripper skipped")
            continue
        prior = [b for t_end, b in biases if t_end <= span["t0"]]
        if not prior:
            diagnostics.append(f"no force bias preceding measure-mass at t={span['t0']:.3f}")
            continue
        rec = estimate_mass(
            recover_wrench_series(chain, window), prior[-1], g=g,
            target=held, source=span["path"],
        )
        estimates.append(rec)
        mass_records.setdefault(held, []).append(rec)

    for span in spans:
        if span["name"] != "MoveDownUntilContact" or span["status"] != "Success":
            continue
        lo, hi = _span_slice(times, span)
        if lo == hi:
            diagnostics.append(f"empty descent span at t={span['t0']:.3f}")
            continue
        contact = records[hi - 1]
        estimates.append(
            estimate_surface_height(contact["x_ee"], chain.tip_offset,
                                    target=height_target, source=span["path"])
        )

    for span in spans:
        if span["name"] != "MovePose" or span["status"] != "Success":
            continue
        lo, hi = _span_slice(times, span)
        window = records[lo:hi]
        if len(window) < 4:
            continue
        held = window[0]["gripper"]["held"]
        if held is None or held not in mass_records:
            continue
        xy = np.array([rec["x_ee"]["pos"][:2] for rec in window])
        if np.linalg.norm(xy[-1] - xy[0]) < min_push:
            continue
        if not any(rec["contacts"] for rec in window):
            continue
        wrenches = recover_wrench_series(chain, window)
        t = np.array([rec["t"] for rec in window])
        v_act = np.zeros(len(window))
        dt_steps = np.diff(t)
        v_act[1:] = np.linalg.norm(np.diff(xy, axis=0), axis=1) / dt_steps
        push = PushTrace(
            t=t,
            f_par=np.linalg.norm(wrenches[:, :2], axis=1),
            f_vert=wrenches[:, 2],
            v_cmd=np.full(len(window), contact_speed),
            v_act=v_act,
            target=held,
        )
        mass = aggregate(mass_records[held])
        try:
            static, dynamic = estimate_friction(push, mass, g=g, diagnostics=diagnostics)
        except ValueError as exc:
            diagnostics.append(f"friction estimation failed at t={span['t0']:.3f}: {exc}")
            continue
        static.source = span["path"]
        estimates.append(static)
        if dynamic is not None:
            dynamic.source = span["path"]
            estimates.append(dynamic)

    return estimates
