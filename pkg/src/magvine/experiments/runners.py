"""Experiment protocols: force sweep, bend table, suspension, retraction, maze.

Each runner is a pure function of (scenario fixtures, calibration
values, config) returning plain result rows; the CLI layer owns file
output.  Seeds make every run reproducible byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..actuation import EpmPose, WorkspaceLimits, circular_epm_trajectory, \
    suspension_setpoint
from ..magnetics import DipoleSource, MagnetSpec, wrench_on_ipm
from ..mechanics import (VineParams, VineState, equilibrium_deflection,
                         growing_force, restoration_moment, tip_pose)
from ..sim import (SimCommand, SimEngine, load_scenario_file, scenario_path)

X = np.array([1.0, 0.0, 0.0])
Z = np.array([0.0, 0.0, 1.0])

EPM_SPEC = MagnetSpec(diameter=0.101, length=0.101, remanence_Br=1.48)
IPM_SPEC = MagnetSpec(diameter=0.011, length=0.022, remanence_Br=1.48)

# in-plane angle of the trajectory moment, measured from the direction
# of travel toward the circle center (see circular_epm_trajectory)
BEND_MOMENT_ANGLE = math.radians(150.0)


@dataclass(frozen=True)
class Calibration:
    """Model constants fitted by the calibrate experiment."""

    drag_C: float = 0.0
    epm_moment_scale: float = 1.0
    restoration_cr: float = 0.01
    residuals: dict = field(default_factory=dict)

    @property
    def epm_moment(self) -> float:
        return EPM_SPEC.moment_magnitude * self.epm_moment_scale

    @property
    def tip_moment(self) -> float:
        return IPM_SPEC.moment_magnitude

    def params(self, **overrides) -> VineParams:
        kw = dict(drag_C=self.drag_C,
                  restoration_coeff_cr=self.restoration_cr)
        kw.update(overrides)
        return VineParams(**kw)

    def save(self, path):
        doc = {"drag_C": self.drag_C,
               "epm_moment_scale": self.epm_moment_scale,
               "restoration_cr": self.restoration_cr,
               "residuals": self.residuals}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Calibration":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(drag_C=doc["drag_C"],
                   epm_moment_scale=doc["epm_moment_scale"],
                   restoration_cr=doc["restoration_cr"],
                   residuals=doc.get("residuals", {}))


# ---------------------------------------------------------------------------
# Tip force sweep (pushing force vs EPM height at a range of pressures)
# ---------------------------------------------------------------------------

def axial_magnetic_force(height: float, offset: float, cal: Calibration) -> float:
    """Largest axial pull on the constrained tip from the EPM above/ahead.

    The tip sits at the origin pointing +x; the EPM is at
    (offset, 0, height).  The force is linear in the EPM moment, so the
    orientation maximizing axial pull (what an operator tuning for
    maximum tip force finds) follows in closed form from the per-axis
    force responses.
    """
    tip = DipoleSource(np.zeros(3), cal.tip_moment * X)
    pos = np.array([offset, 0.0, height])
    fx = np.array([wrench_on_ipm(
        DipoleSource(pos, cal.epm_moment * e), tip).force[0]
        for e in np.eye(3)])
    return float(np.linalg.norm(fx))


def push_force(P: float, height: float, offset: float, cal: Calibration,
               params: VineParams | None = None) -> dict:
    """Total pushing force F_push = F_g + axial F_m and its split."""
    params = params if params is not None else cal.params()
    fg = growing_force(P, params)
    fm = axial_magnetic_force(height, offset, cal)
    total = fg + fm
    return {"pressure": P, "height": height, "F_g": fg, "F_m_axial": fm,
            "F_push": total,
            "growing_fraction": fg / total if total > 0 else math.nan}


def run_force_sweep(cal: Calibration, pressures=None, heights=None,
                    offset: float = 0.085) -> list[dict]:
    """Fig 5B protocol: pushing force over a pressure/height grid."""
    pressures = (np.arange(0.0, 30e3 + 1, 5e3) if pressures is None
                 else np.asarray(pressures, dtype=float))
    heights = (np.arange(0.10, 0.30 + 1e-9, 0.05) if heights is None
               else np.asarray(heights, dtype=float))
    rows = []
    for P in pressures:
        for d in heights:
            rows.append(push_force(float(P), float(d), offset, cal))
    return rows


# ---------------------------------------------------------------------------
# Bend table (circular EPM trajectories, Table 1 protocol)
# ---------------------------------------------------------------------------

def sweep_trajectory(length_l: float, P: float, cal: Calibration,
                     end_angle: float = math.radians(130.0),
                     height: float = 0.16,
                     step: float = math.radians(1.0)):
    """Swept circular trajectory tracking the equilibrium branch.

    Returns (final state, buckled flag, per-pose deflections).
    """
    params = cal.params()
    st = VineState(unconstrained_length_l=length_l, pressure_P=P)
    poses = circular_epm_trajectory(length_l, height, (0.0, end_angle), step,
                                    moment_angle=BEND_MOMENT_ANGLE)
    theta, azimuth = None, None
    buckled = False
    thetas = []
    for pose in poses:
        res = equilibrium_deflection(
            pose.as_source(cal.epm_moment), st, params, cal.tip_moment,
            plane_normal=Z, theta_init=theta, azimuth_init=azimuth)
        theta, azimuth = res.theta, res.bend_azimuth
        buckled = buckled or res.buckled
        thetas.append(theta)
    final = st.with_(deflection_theta=theta, bend_azimuth=azimuth)
    return final, buckled, np.array(thetas)


def estimate_radius(state: VineState, noisy_tip: np.ndarray) -> float:
    """Arc radius from an observed tip position (image-analysis analogue).

    Fits the circular arc through the base (with known base tangent) and
    the observed tip: chord c at angle beta from the tangent gives
    r = c / (2 sin beta).
    """
    chord_vec = noisy_tip - state.base_position
    c = float(np.linalg.norm(chord_vec))
    if c < 1e-12:
        return math.inf
    cosb = float(np.clip(chord_vec @ state.base_tangent / c, -1.0, 1.0))
    beta = math.acos(cosb)
    if beta < 1e-9:
        return math.inf
    return c / (2.0 * math.sin(beta))


def run_bend_table(cal: Calibration, lengths=None, pressures=None,
                   repeats: int = 5, seed: int = 0,
                   noise_sigma: float = 1.0e-3,
                   hold_samples: int = 50) -> list[dict]:
    """Table 1 protocol: mean/std bending radius over a 3x3 grid.

    The physics per condition is deterministic; repeats differ in the
    localization noise on the observed tip, from which the radius is
    estimated exactly as a final-position measurement would be.
    """
    lengths = [0.100, 0.150, 0.200] if lengths is None else list(lengths)
    pressures = [10e3, 20e3, 30e3] if pressures is None else list(pressures)
    rows = []
    for l in lengths:
        for P in pressures:
            final, buckled, _ = sweep_trajectory(l, P, cal)
            true_tip = tip_pose(final).tip_position
            true_radius = (l / final.deflection_theta
                           if final.deflection_theta > 0 else math.inf)
            estimates = []
            for rep in range(repeats):
                rng = np.random.default_rng(
                    [seed, rep, int(l * 1e4), int(P)])
                samples = [estimate_radius(
                    final, true_tip + rng.normal(0.0, noise_sigma, 3))
                    for _ in range(hold_samples)]
                estimates.append(float(np.mean(samples)))
            rows.append({
                "length": l, "pressure": P,
                "mean_radius": float(np.mean(estimates)),
                "std_radius": float(np.std(estimates, ddof=1)),
                "true_radius": true_radius,
                "final_theta": final.deflection_theta,
                "buckled": buckled,
            })
    return rows


def run_overbend(cal: Calibration, length_l: float = 0.15, P: float = 30e3,
                 reduced_height: float = 0.08, lead: float = math.radians(30),
                 max_steps: int = 200) -> dict:
    """Scripted over-bend: drive the EPM past the trajectory end, lower
    and leading the tip, until the body kinks about the pivot."""
    params = cal.params()
    final, buckled, _ = sweep_trajectory(length_l, P, cal)
    st = final
    theta, azimuth = st.deflection_theta, st.bend_azimuth
    steps = 0
    applied = 0.0
    for steps in range(1, max_steps + 1):
        cur = st.with_(deflection_theta=theta, bend_azimuth=azimuth)
        tp = tip_pose(cur).tip_position
        ang = math.atan2(tp[1], tp[0]) + lead
        rad = math.hypot(tp[0], tp[1])
        pos = np.array([rad * math.cos(ang), rad * math.sin(ang),
                        reduced_height])
        inward = -np.array([math.cos(ang), math.sin(ang), 0.0])
        res = equilibrium_deflection(
            DipoleSource(pos, cal.epm_moment * inward), cur, params,
            cal.tip_moment, plane_normal=Z,
            theta_init=theta, azimuth_init=azimuth)
        theta, azimuth = res.theta, res.bend_azimuth
        applied = res.applied_moment
        if res.buckled:
            buckled = True
            break
    return {"buckled": buckled, "steps": steps, "final_theta": theta,
            "applied_moment": applied}


# ---------------------------------------------------------------------------
# Suspension (tube90, pre-planned EPM path from the inverse solver)
# ---------------------------------------------------------------------------

def plan_suspension_path(scenario, cal: Calibration, epm_height: float = 0.16,
                         station_ds: float = 0.004,
                         lift_bias: float = 0.08) -> list[tuple[float, EpmPose]]:
    """Pre-planned EPM poses along the lumen (paper-style open loop).

    For stations along the centerline, solves the suspension setpoint of
    a nominal tip state at the station (lift balance plus the steering
    torque that bends the free segment with the local channel
    curvature).  Returns (arc position, pose) pairs.
    """
    lumen = scenario.environment.segments[0]
    params = cal.params(tip_mass=scenario.vine_params.tip_mass)
    l_free = scenario.initial_state.unconstrained_length_l
    P = scenario.initial_state.pressure_P
    s0 = scenario.initial_state.constrained_length + l_free
    stations = np.arange(s0, lumen.length + station_ds, station_ds)
    plan = []
    prev_pose = None
    for s in stations:
        s_tip = min(s, lumen.length)
        base_s = max(0.0, s_tip - l_free)
        base = lumen.point_at(base_s)
        tangent = lumen.tangent_at(base_s)
        normal = np.cross(Z, tangent)
        normal /= np.linalg.norm(normal)
        # channel curvature ahead sets the steering torque
        t_ahead = lumen.tangent_at(min(s_tip + l_free, lumen.length))
        cosd = float(np.clip(tangent @ t_ahead, -1.0, 1.0))
        theta_des = math.acos(cosd)
        axis = np.cross(tangent, t_ahead)
        if np.linalg.norm(axis) > 1e-12 and theta_des > 1e-6:
            axis = axis / np.linalg.norm(axis)
            steer = restoration_moment(theta_des, P, params) * axis
        else:
            steer = None
        nominal = VineState(base_position=base, base_tangent=tangent,
                            base_normal=normal,
                            unconstrained_length_l=l_free, pressure_P=P)
        pose, report = suspension_setpoint(
            nominal, params, epm_height, epm_moment=cal.epm_moment,
            tip_moment=cal.tip_moment, limits=scenario.limits,
            lift_bias=lift_bias, steering_torque=steer,
            initial_guess=prev_pose)
        prev_pose = pose
        plan.append((float(s_tip), pose))
    return plan


def _interp_pose(plan, s: float) -> EpmPose:
    stations = [p[0] for p in plan]
    idx = int(np.searchsorted(stations, s))
    if idx <= 0:
        return plan[0][1]
    if idx >= len(plan):
        return plan[-1][1]
    (s0, p0), (s1, p1) = plan[idx - 1], plan[idx]
    w = (s - s0) / (s1 - s0) if s1 > s0 else 1.0
    pos = (1 - w) * p0.position + w * p1.position
    mdir = (1 - w) * p0.moment_dir + w * p1.moment_dir
    mdir = mdir / np.linalg.norm(mdir)
    return EpmPose(pos, mdir)


def run_suspension_once(cal: Calibration, speed: float, seed: int,
                        epm_height: float = 0.16,
                        lift_bias: float = 0.08,
                        plan=None) -> dict:
    """One tube90 suspension run at a given EPM speed; returns the trace
    and wall-gap / coupling statistics."""
    scenario = load_scenario_file(scenario_path("tube90.scn"))
    scenario = scenario.with_calibration(
        drag_C=cal.drag_C, epm_moment_scale=cal.epm_moment_scale,
        restoration_cr=cal.restoration_cr).with_seed(seed)
    if plan is None:
        plan = plan_suspension_path(scenario, cal, epm_height,
                                    lift_bias=lift_bias)
    engine = SimEngine(scenario)
    lumen = scenario.environment.segments[0]
    s_start = (scenario.initial_state.constrained_length
               + scenario.initial_state.unconstrained_length_l)
    duration = (lumen.length - s_start) / speed
    n = int(duration / scenario.dt)
    for k in range(n):
        s_cmd = s_start + speed * (k * scenario.dt)
        cmd = SimCommand(epm_pose=_interp_pose(plan, s_cmd), grow_rate=speed)
        engine.step(cmd)
    hist = engine.history
    gaps = np.array([r.wall_gap for r in hist])
    dx = np.array([r.epm_pos[0] - r.tip_true[0] for r in hist])
    dy = np.array([r.epm_pos[1] - r.tip_true[1] for r in hist])
    contacts = sum(1 for r in hist if r.contact)
    return {
        "speed": speed, "seed": seed,
        "mean_gap": float(np.mean(gaps)), "std_gap": float(np.std(gaps)),
        "min_gap": float(np.min(gaps)),
        "gap_positive_fraction": float(np.mean(gaps > 0)),
        "mean_dx": float(np.mean(np.abs(dx))),
        "mean_dy": float(np.mean(np.abs(dy))),
        "contacts": contacts,
        "history": hist,
    }


def run_suspension(cal: Calibration, speeds=(0.003, 0.004), repeats: int = 5,
                   seed: int = 0, epm_height: float = 0.16,
                   lift_bias: float = 0.08) -> list[dict]:
    """Fig 8 protocol: repeated suspended navigation at two EPM speeds."""
    scenario = load_scenario_file(scenario_path("tube90.scn"))
    scenario = scenario.with_calibration(
        drag_C=cal.drag_C, epm_moment_scale=cal.epm_moment_scale,
        restoration_cr=cal.restoration_cr)
    plan = plan_suspension_path(scenario, cal, epm_height,
                                lift_bias=lift_bias)
    rows = []
    for speed in speeds:
        for rep in range(repeats):
            rows.append(run_suspension_once(
                cal, speed, seed=seed + rep, epm_height=epm_height,
                lift_bias=lift_bias, plan=plan))
    return rows


# ---------------------------------------------------------------------------
# Retraction matrix (Fig 9 protocol)
# ---------------------------------------------------------------------------

RETRACTION_CASES = (
    ("A", 0.0, False),      # deflated, no EPM
    ("B", 3000.0, False),   # inflated, no EPM
    ("C", 0.0, True),       # deflated, EPM at 60 mm
    ("D", 3000.0, True),    # inflated, EPM at 60 mm
)


def run_retraction_case(cal: Calibration, pressure: float, with_epm: bool,
                        seed: int = 0, epm_height: float = 0.06,
                        retract_rate: float = 0.003,
                        target_length: float = 0.08) -> dict:
    """One retraction attempt; the EPM (when present) tracks above the tip."""
    scenario = load_scenario_file(scenario_path("retraction.scn"))
    scenario = scenario.with_calibration(
        drag_C=cal.drag_C, epm_moment_scale=cal.epm_moment_scale,
        restoration_cr=cal.restoration_cr).with_seed(seed)
    engine = SimEngine(scenario)
    engine.step(SimCommand(pressure_setpoint=pressure))
    max_ticks = int(3.0 * 0.32 / retract_rate / scenario.dt)
    for _ in range(max_ticks):
        st = engine.state
        if st.buckled or st.vine.total_length <= target_length:
            break
        pose = (EpmPose(st.tip_true + epm_height * Z, Z) if with_epm
                else None)
        engine.step(SimCommand(epm_pose=pose, grow_rate=-retract_rate))
    st = engine.state
    if st.buckled:
        outcome = "buckled"
    elif st.vine.total_length <= target_length:
        outcome = "success-with-stalls" if st.stall_count > 0 else "success"
    else:
        outcome = "incomplete"
    return {"pressure": pressure, "epm": with_epm, "seed": seed,
            "outcome": outcome, "stalls": st.stall_count,
            "final_length": st.vine.total_length,
            "retracted": 0.32 - st.vine.total_length,
            "epm_height": epm_height}


def run_retraction_matrix(cal: Calibration, seed: int = 0,
                          epm_height: float = 0.06) -> list[dict]:
    """Fig 9's four-condition outcome table."""
    rows = []
    for label, pressure, with_epm in RETRACTION_CASES:
        row = run_retraction_case(cal, pressure, with_epm, seed=seed,
                                  epm_height=epm_height)
        row["case"] = label
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Maze navigation (Fig 10 protocol, scripted commands)
# ---------------------------------------------------------------------------

def run_maze(cal: Calibration, script=None, seed: int = 0,
             target_tol: float = 0.02, max_time: float = 400.0) -> dict:
    """Run the maze scenario under a recorded/synthesized command script."""
    scenario = load_scenario_file(scenario_path("maze.scn"))
    scenario = scenario.with_calibration(
        drag_C=cal.drag_C, epm_moment_scale=cal.epm_moment_scale,
        restoration_cr=cal.restoration_cr).with_seed(seed)
    engine = SimEngine(scenario)
    entries = [] if script is None else list(script)
    idx = 0
    n = int(max_time / scenario.dt)
    reached_at = None
    for _ in range(n):
        cmd = None
        while idx < len(entries) and entries[idx][0] <= engine.state.t + 1e-12:
            cmd = entries[idx][1]
            idx += 1
        engine.step(cmd)
        if engine.state.target_distance < target_tol:
            reached_at = engine.state.t
            break
        if idx >= len(entries) and engine.state.grow_rate == 0.0:
            break
    st = engine.state
    return {"completed": reached_at is not None,
            "elapsed": reached_at if reached_at is not None else st.t,
            "contacts": st.contact_count,
            "final_distance": st.target_distance,
            "history": engine.history}


def load_maze_script(path=None) -> list[tuple[float, SimCommand]]:
    """Load a maze command script (the bundled reference by default)."""
    if path is None:
        path = scenario_path("maze_script.json")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = []
    for e in doc["commands"]:
        pose = None
        if e.get("epm"):
            pose = EpmPose(np.array(e["epm"]["position"]),
                           np.array(e["epm"]["moment_dir"]))
        entries.append((float(e["t"]), SimCommand(
            epm_pose=pose, pressure_setpoint=e.get("pressure"),
            grow_rate=e.get("grow_rate"))))
    entries.sort(key=lambda pair: pair[0])
    return entries


def synthesize_maze_script(cal: Calibration, speed: float = 0.003,
                           lead: float = 0.05, epm_height: float = 0.12,
                           command_interval: float = 0.5) -> list[dict]:
    """Plan a maze-driving script: the EPM hovers over a lead point on
    the channel and aligns the tip with the local tangent."""
    scenario = load_scenario_file(scenario_path("maze.scn"))
    lumen = scenario.environment.segments[0]
    target = scenario.environment.targets[0].position
    s0 = (scenario.initial_state.constrained_length
          + scenario.initial_state.unconstrained_length_l)
    total_run = lumen.length + float(np.linalg.norm(
        target - lumen.point_at(lumen.length))) + 0.02
    doc = [{"t": 0.0, "grow_rate": speed,
            "pressure": scenario.initial_state.pressure_P}]
    t = 0.0
    while s0 + speed * t < total_run:
        s_tip = s0 + speed * t
        s_lead = s_tip + lead
        if s_lead <= lumen.length:
            point = lumen.point_at(s_lead)
            tangent = lumen.tangent_at(s_lead)
        else:
            exit_pt = lumen.point_at(lumen.length)
            tangent3 = target - exit_pt
            tangent3[2] = 0.0
            tangent = tangent3 / np.linalg.norm(tangent3)
            point = exit_pt + (s_lead - lumen.length) * tangent
        mdir = -tangent
        doc.append({"t": round(t, 3),
                    "epm": {"position": [round(float(point[0]), 6),
                                         round(float(point[1]), 6),
                                         round(epm_height, 6)],
                            "moment_dir": [round(float(mdir[0]), 9),
                                           round(float(mdir[1]), 9),
                                           round(float(mdir[2]), 9)]}})
        t += command_interval
    return doc
