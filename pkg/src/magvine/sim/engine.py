"""Deterministic quasi-static scenario simulation.

Each tick: update pressure and length (growth gated by a positive
growing force and, inside a lumen, by tip/channel alignment), advance
the everted body along the constrained path, solve the tip equilibrium
for the unconstrained segment, project the tip out of walls, evaluate
buckling (collapse moment and, during retraction, the tether-moment
test), sample localization noise, and append a trace record.  Bit-
identical traces for identical scenario and seed.

The everted body is laid along the lumen centerline (or, in free space,
the initial straight ray): eversion extends the robot at the tip and
never moves material already laid, so the constrained path is a pure
function of the constrained length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..actuation import EpmPose, teleop_map
from ..magnetics import DipoleSource, wrench_on_ipm
from ..mechanics import (GRAVITY, VineState, collapse_moment,
                         equilibrium_deflection, growing_force, tip_pose)
from .environment import contact_project
from .scenario import RetractionModel, Scenario, SimCommand
from .trace import TraceRecord

Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SimState:
    """Immutable simulation snapshot handed to readers."""

    t: float
    tick: int
    vine: VineState
    epm_pose: EpmPose | None
    grow_rate: float
    tip_true: np.ndarray
    tip_tangent: np.ndarray
    tip_noisy: np.ndarray
    contact: bool
    buckled: bool
    stalled: bool
    wall_gap: float
    stall_count: int
    contact_count: int
    target_distance: float


def _wall_theta_limit(length: float, clearance: float) -> float:
    """Deflection at which the arc tip's lateral offset reaches clearance.

    Solves (1 - cos t) / t = clearance / length, monotone on (0, pi).
    """
    if length <= 0:
        return math.pi - 1e-6
    ratio = clearance / length
    if ratio >= 2.0 / math.pi:
        return math.pi - 1e-6
    lo, hi = 0.0, math.pi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if (1.0 - math.cos(mid)) / mid < ratio:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def localization_sample(position, tangent, noise, rng):
    """Additive zero-mean Gaussian pose noise, deterministic under seed.

    Position noise is per-axis; orientation noise tilts the tangent
    about two orthogonal axes.
    """
    pos = np.asarray(position, dtype=float)
    tan = np.asarray(tangent, dtype=float)
    noisy_pos = pos + rng.normal(0.0, noise.sigma_pos, 3)
    angles = rng.normal(0.0, noise.sigma_ang, 2)
    ref = Z if abs(tan @ Z) < 0.9 else np.array([1.0, 0.0, 0.0])
    u1 = np.cross(tan, ref)
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(tan, u1)
    noisy_tan = tan + angles[0] * u1 + angles[1] * u2
    noisy_tan /= np.linalg.norm(noisy_tan)
    return noisy_pos, noisy_tan


def retraction_moment_test(state: VineState, retract_rate: float,
                           epm: DipoleSource | None, *, params, model:
                           RetractionModel, tip_moment: float,
                           tether_tension: float | None = None,
                           stall_draw: float | None = None,
                           dt: float = 0.01):
    """Tether-moment buckling and engulfment-stall test during retraction.

    The tensioned tether loads the tip with a moment of tension times the
    tip radius; the body buckles when that exceeds the collapse moment
    plus the stabilizing contribution of the magnetic wrench (the
    grounding force opposing the tether pull).  Stalls (occasional tip
    engulfment) occur stochastically only when the body is inflated and
    an EPM is coupled; the caller supplies the uniform draw so the
    outcome stays a pure function of its inputs.
    """
    if retract_rate >= 0:
        raise ValueError("retraction test requires a negative grow rate")
    tension = (model.tension(retract_rate) if tether_tension is None
               else tether_tension)
    tether_moment = tension * (params.tip_diameter / 2.0)
    threshold = collapse_moment(state.pressure_P, params)
    if epm is not None:
        pose = tip_pose(state)
        w = wrench_on_ipm(epm, DipoleSource(pose.tip_position,
                                            tip_moment * pose.tip_tangent))
        # grounding force only: attraction pins the tip; torque does not
        threshold += (model.stabilization_coeff
                      * np.linalg.norm(w.force) * params.tip_length)
    buckled = tether_moment > threshold
    stalled = False
    if (not buckled and state.pressure_P > 0 and epm is not None
            and stall_draw is not None):
        stalled = stall_draw < model.stall_rate * dt
    return buckled, stalled


class SimEngine:
    """Single-writer scenario simulation; snapshots are immutable."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.params = scenario.vine_params
        self.epm_moment = (scenario.epm_spec.moment_magnitude
                           * scenario.epm_moment_scale)
        self.tip_moment = scenario.ipm_spec.moment_magnitude
        self.rng = np.random.default_rng(scenario.rng_seed)
        self.lumen = (scenario.environment.segments[0]
                      if scenario.environment.segments else None)
        self.history: list[TraceRecord] = []
        self._gate_cos = math.cos(math.radians(scenario.growth_gate_deg))
        self._stall_ticks_left = 0
        self._script = list(scenario.script)
        self._script_idx = 0

        st = scenario.initial_state
        st = self._rebase(st, st.constrained_length)
        self._pressure = st.pressure_P
        self._grow_rate = 0.0
        self._epm: EpmPose | None = None
        self._theta: float | None = None
        self._azimuth: float | None = None
        pose = tip_pose(st)
        self.state = SimState(
            t=0.0, tick=0, vine=st, epm_pose=None, grow_rate=0.0,
            tip_true=pose.tip_position, tip_tangent=pose.tip_tangent,
            tip_noisy=pose.tip_position, contact=False, buckled=False,
            stalled=False, wall_gap=math.inf, stall_count=0,
            contact_count=0,
            target_distance=self._target_distance(pose.tip_position))

    def _rebase(self, st: VineState, s: float) -> VineState:
        """Base frame of the unconstrained segment at constrained length s."""
        if self.lumen is not None:
            s_clamped = min(s, self.lumen.length)
            base = self.lumen.point_at(s_clamped)
            tangent = self.lumen.tangent_at(s_clamped)
            normal = np.cross(Z, tangent)
            normal /= np.linalg.norm(normal)
            if s > self.lumen.length:
                base = base + (s - self.lumen.length) * tangent
        else:
            init = self.scenario.initial_state
            base = init.base_position + s * init.base_tangent
            tangent = init.base_tangent
            normal = init.base_normal
        return st.with_(base_position=base, base_tangent=tangent,
                        base_normal=normal, constrained_length=s)

    def _target_distance(self, tip) -> float:
        targets = self.scenario.environment.targets
        if not targets:
            return math.inf
        return min(float(np.linalg.norm(tip - t.position)) for t in targets)

    def _merge_command(self, cmd: SimCommand | None):
        if cmd is None:
            return
        if cmd.pressure_setpoint is not None:
            self._pressure = cmd.pressure_setpoint
        if cmd.grow_rate is not None:
            self._grow_rate = cmd.grow_rate
        if cmd.epm_pose is not None:
            self._epm = cmd.epm_pose
        if cmd.epm_twist is not None:
            base = self._epm if self._epm is not None else EpmPose(
                self.state.tip_true + 0.16 * Z, Z)
            self._epm = teleop_map(cmd.epm_twist, base, self.scenario.limits,
                                   self.scenario.dt,
                                   ipm_position=self.state.tip_true)

    def _script_command(self, t: float) -> SimCommand | None:
        cmd = None
        while (self._script_idx < len(self._script)
               and self._script[self._script_idx][0] <= t + 1e-12):
            cmd = self._script[self._script_idx][1]
            self._merge_command(cmd)
            self._script_idx += 1
        return cmd

    def step(self, cmd: SimCommand | None = None) -> SimState:
        """Advance one tick of scenario.dt; returns the new snapshot."""
        scn = self.scenario
        dt = scn.dt
        prev = self.state
        t_new = prev.t + dt
        self._script_command(prev.t)
        self._merge_command(cmd)

        st = prev.vine.with_(pressure_P=self._pressure)
        buckled = prev.buckled
        stalled = False
        stall_count = prev.stall_count
        rate = self._grow_rate
        tether_tension = cmd.tether_tension if cmd is not None else None

        epm_src = (self._epm.as_source(self.epm_moment)
                   if self._epm is not None else None)

        if buckled:
            rate = 0.0  # a kinked body neither grows nor retracts

        if rate > 0.0 and growing_force(st.pressure_P, self.params) > 0.0:
            dl = rate * dt
            s = st.constrained_length
            if self.lumen is not None and s < self.lumen.length:
                ahead = self.lumen.tangent_at(
                    min(s + st.unconstrained_length_l, self.lumen.length))
                # heading gate is planar: the lumen wall carries any
                # vertical droop, steering happens in the plane
                head = prev.tip_tangent * np.array([1.0, 1.0, 0.0])
                head_n = np.linalg.norm(head)
                aligned = (head_n < 1e-9
                           or float(head @ ahead) / head_n >= self._gate_cos)
                if aligned:
                    ds = min(dl, self.lumen.length - s)
                    st = self._rebase(
                        st.with_(unconstrained_length_l=(
                            st.unconstrained_length_l + dl - ds)),
                        s + ds)
                else:
                    stalled = True
                    stall_count += 1 if not prev.stalled else 0
            else:
                st = st.with_(unconstrained_length_l=(
                    st.unconstrained_length_l + dl))
        elif rate < 0.0:
            draw = None
            if st.pressure_P > 0 and epm_src is not None:
                draw = float(self.rng.random())
            if self._stall_ticks_left > 0:
                self._stall_ticks_left -= 1
                stalled = True
            else:
                b, engulfed = retraction_moment_test(
                    st, rate, epm_src, params=self.params,
                    model=scn.retraction, tip_moment=self.tip_moment,
                    tether_tension=tether_tension, stall_draw=draw, dt=dt)
                if b:
                    buckled = True
                elif engulfed:
                    stalled = True
                    stall_count += 1
                    self._stall_ticks_left = max(
                        0, int(round(scn.retraction.stall_duration / dt)) - 1)
                else:
                    dl = -rate * dt
                    take_l = min(dl, max(0.0, st.unconstrained_length_l
                                         - scn.retraction.min_free_length))
                    take_s = min(dl - take_l, st.constrained_length)
                    st = self._rebase(
                        st.with_(unconstrained_length_l=(
                            st.unconstrained_length_l - take_l)),
                        st.constrained_length - take_s)

        if scn.mode == "free3d":
            extra = np.array([0.0, 0.0, -self.params.tip_mass * GRAVITY])
            plane = None
        else:
            extra = None
            plane = Z

        res = equilibrium_deflection(
            epm_src, st, self.params, self.tip_moment,
            extra_tip_force=extra, plane_normal=plane,
            theta_init=self._theta, azimuth_init=self._azimuth)
        theta = res.theta
        if self.lumen is not None:
            # the wall caps the deflection: lateral displacement of the
            # tip center cannot exceed the cross-section clearance
            clearance = (self.lumen.inner_diameter
                         - self.params.tip_diameter) / 2.0
            theta = min(theta, _wall_theta_limit(
                st.unconstrained_length_l, clearance))
        self._theta, self._azimuth = theta, res.bend_azimuth
        buckled = buckled or res.buckled
        st = st.with_(deflection_theta=theta, bend_azimuth=res.bend_azimuth)

        pose = tip_pose(st)
        projected, contact, gap = contact_project(
            pose.tip_position, self.params.tip_diameter / 2.0,
            scn.environment)

        if epm_src is not None:
            w = wrench_on_ipm(epm_src, DipoleSource(
                pose.tip_position, self.tip_moment * pose.tip_tangent))
            F_m, tau_m = w.force, w.torque
        else:
            F_m, tau_m = np.zeros(3), np.zeros(3)

        noisy_pos, _ = localization_sample(projected, pose.tip_tangent,
                                           scn.noise, self.rng)

        record = TraceRecord(
            t=t_new,
            epm_pos=(self._epm.position if self._epm is not None
                     else np.zeros(3)),
            epm_moment_dir=(self._epm.moment_dir if self._epm is not None
                            else np.zeros(3)),
            tip_true=projected, tip_noisy=noisy_pos,
            theta=res.theta, pressure=st.pressure_P,
            total_length=st.total_length,
            F_g=growing_force(st.pressure_P, self.params),
            F_m=F_m, tau_m=tau_m,
            contact=contact, buckled=buckled, wall_gap=gap)
        self.history.append(record)

        self.state = SimState(
            t=t_new, tick=prev.tick + 1, vine=st, epm_pose=self._epm,
            grow_rate=rate, tip_true=projected, tip_tangent=pose.tip_tangent,
            tip_noisy=noisy_pos, contact=contact, buckled=buckled,
            stalled=stalled, wall_gap=gap, stall_count=stall_count,
            contact_count=prev.contact_count + (1 if contact else 0),
            target_distance=self._target_distance(projected))
        return self.state

    def run(self, duration: float) -> list[TraceRecord]:
        """Run the scenario script for a simulated duration."""
        n = int(round(duration / self.scenario.dt))
        for _ in range(n):
            self.step()
        return self.history

    def laid_points(self, spacings) -> np.ndarray:
        """Body points at fixed arc positions along the laid path."""
        out = []
        for s in spacings:
            if s > self.state.vine.constrained_length:
                raise ValueError("arc position beyond the laid path")
            if self.lumen is not None:
                out.append(self.lumen.point_at(s))
            else:
                init = self.scenario.initial_state
                out.append(init.base_position + s * init.base_tangent)
        return np.array(out)
