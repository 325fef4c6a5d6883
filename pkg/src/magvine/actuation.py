"""Inverse actuation: EPM poses realizing a desired tip wrench or heading.

The core solver is a damped iterative least-squares fit over five free
variables (EPM position plus two moment-direction angles) with
numerically differentiated sensitivities, projected onto the workspace
constraints (bounding box, minimum standoff) after every accepted step.
Returned poses never violate the constraints.

The dipole wrench map is symmetric under reflection through the bending
plane, so several poses can realize one wrench; ties are broken by
staying nearest the initial guess (a physical EPM must move
continuously).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .magnetics import DipoleSource, MU0, wrench_on_ipm
from .mechanics import GRAVITY, VineParams, VineState, restoration_moment, tip_pose

Z = np.array([0.0, 0.0, 1.0])

# sensitivity step is 1e-6 of each variable's scale
_FD_REL = 1e-6
_POSITION_SCALE = 0.1
_ANGLE_SCALE = 1.0


class HeadingRangeError(ValueError):
    """Desired heading points behind the base tangent."""


@dataclass(frozen=True)
class EpmPose:
    """External magnet pose: position plus unit moment direction."""

    position: np.ndarray
    moment_dir: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        d = np.asarray(self.moment_dir, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"moment direction must be unit, got norm {n}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "moment_dir", d)

    def as_source(self, moment_magnitude: float) -> DipoleSource:
        return DipoleSource(self.position, moment_magnitude * self.moment_dir)


@dataclass(frozen=True)
class WorkspaceLimits:
    """Reachable EPM region: box, minimum EPM-IPM separation, speed cap."""

    min_standoff: float = 0.06
    box_lo: np.ndarray = field(
        default_factory=lambda: np.array([-1.0, -1.0, 0.0]))
    box_hi: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 1.0, 0.6]))
    max_speed: float = 0.02
    max_ang_speed: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "box_lo",
                           np.asarray(self.box_lo, dtype=float).reshape(3))
        object.__setattr__(self, "box_hi",
                           np.asarray(self.box_hi, dtype=float).reshape(3))
        if self.min_standoff <= 0:
            raise ValueError("min_standoff must be positive")
        if np.any(self.box_hi < self.box_lo):
            raise ValueError("degenerate bounding box")

    def clamp_position(self, pos: np.ndarray, ipm_position=None) -> np.ndarray:
        """Project into the box, then out of the standoff sphere."""
        p = np.clip(np.asarray(pos, dtype=float), self.box_lo, self.box_hi)
        if ipm_position is not None:
            r = p - ipm_position
            dist = np.linalg.norm(r)
            if dist < self.min_standoff:
                if dist < 1e-12:
                    r, dist = Z.copy(), 1.0
                p = ipm_position + r * (self.min_standoff / dist)
        return p

    def contains(self, pos: np.ndarray, ipm_position=None,
                 tol: float = 1e-9) -> bool:
        p = np.asarray(pos, dtype=float)
        if np.any(p < self.box_lo - tol) or np.any(p > self.box_hi + tol):
            return False
        if ipm_position is not None:
            if np.linalg.norm(p - ipm_position) < self.min_standoff - tol:
                return False
        return True


@dataclass(frozen=True)
class WrenchTarget:
    """Desired force/torque on the tip dipole with per-component weights.

    force_axis_weights optionally narrows the force objective to a
    subset of axes (e.g. (0, 0, 1) constrains only the vertical force,
    leaving lateral pull free, as in tip suspension).
    """

    force: np.ndarray
    torque: np.ndarray
    force_weight: float = 1.0
    torque_weight: float = 1.0
    force_axis_weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "force",
                           np.asarray(self.force, dtype=float).reshape(3))
        object.__setattr__(self, "torque",
                           np.asarray(self.torque, dtype=float).reshape(3))
        if self.force_axis_weights is not None:
            w = np.asarray(self.force_axis_weights, dtype=float).reshape(3)
            if np.any(w < 0):
                raise ValueError("axis weights must be non-negative")
            object.__setattr__(self, "force_axis_weights", w)
        if self.force_weight < 0 or self.torque_weight < 0:
            raise ValueError("weights must be non-negative")
        if self.force_weight == 0 and self.torque_weight == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class SolveReport:
    residual: float
    iterations: int
    feasible: bool


def _orthonormal_pair(d: np.ndarray):
    """Two unit vectors spanning the plane orthogonal to d."""
    ref = Z if abs(d @ Z) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    a = np.linalg.norm(axis)
    if a < 1e-15 or angle == 0.0:
        return v
    k = axis / a
    return (v * math.cos(angle) + np.cross(k, v) * math.sin(angle)
            + k * (k @ v) * (1.0 - math.cos(angle)))


def max_field_magnitude(epm_moment: float, separation: float) -> float:
    """Largest attainable |B| at a given separation (on-axis value)."""
    return MU0 * epm_moment / (2.0 * math.pi * separation**3)


def solve_epm_pose(
    target: WrenchTarget,
    ipm: DipoleSource,
    limits: WorkspaceLimits,
    initial_guess: EpmPose,
    epm_moment: float,
    tol: float = 1e-9,
    max_iter: int = 120,
    restarts: bool = True,
) -> tuple[EpmPose, SolveReport]:
    """Find an EPM pose whose wrench on the IPM matches the target.

    Minimizes the weighted squared wrench error over EPM position and
    moment direction, subject to the workspace box and minimum standoff.

    Args:
        target: Desired wrench with component weights.
        ipm: Tip dipole (position and moment).
        limits: Workspace constraints; the initial guess must satisfy
            them.
        initial_guess: Starting pose, also the continuity reference.
        epm_moment: EPM dipole magnitude (A*m^2).
        tol: Weighted residual at or below which the fit is feasible.
        max_iter: Damped least-squares iterations per start.
        restarts: Try canonical fallback starts when the primary start
            stalls above tol.

    Returns:
        (pose, report); report.feasible is False when the target wrench
        is unreachable within the limits, with the best-effort pose
        returned for the caller to judge.
    """
    if not limits.contains(initial_guess.position, ipm.position):
        raise ValueError("initial guess violates workspace limits")

    wf, wt = math.sqrt(target.force_weight), math.sqrt(target.torque_weight)
    axis_w = (np.ones(3) if target.force_axis_weights is None
              else np.sqrt(target.force_axis_weights))

    def residual_vec(pos, mdir):
        w = wrench_on_ipm(DipoleSource(pos, epm_moment * mdir), ipm)
        return np.concatenate([wf * axis_w * (w.force - target.force),
                               wt * (w.torque - target.torque)])

    def run(start: EpmPose):
        pos = limits.clamp_position(start.position, ipm.position)
        mdir = start.moment_dir.copy()
        r = residual_vec(pos, mdir)
        cost = float(r @ r)
        lam = 1e-3
        iterations = 0
        for iterations in range(1, max_iter + 1):
            u1, u2 = _orthonormal_pair(mdir)

            def apply_step(delta):
                p = pos + delta[:3]
                d = _rotate(mdir, u1 * delta[3] + u2 * delta[4],
                            math.hypot(delta[3], delta[4]))
                d = d / np.linalg.norm(d)
                return limits.clamp_position(p, ipm.position), d

            J = np.empty((6, 5))
            for i in range(3):
                h = _FD_REL * max(abs(pos[i]), _POSITION_SCALE)
                pp = pos.copy()
                pp[i] += h
                J[:, i] = (residual_vec(pp, mdir) - r) / h
            for i, axis in enumerate((u1, u2)):
                h = _FD_REL * _ANGLE_SCALE
                dp = _rotate(mdir, axis, h)
                J[:, 3 + i] = (residual_vec(pos, dp) - r) / h

            JtJ = J.T @ J
            g = J.T @ r
            improved = False
            for _ in range(12):
                A = JtJ + lam * np.diag(np.maximum(np.diag(JtJ), 1e-12))
                try:
                    delta = np.linalg.solve(A, -g)
                except np.linalg.LinAlgError:
                    lam *= 5.0
                    continue
                p_new, d_new = apply_step(delta)
                r_new = residual_vec(p_new, d_new)
                c_new = float(r_new @ r_new)
                if c_new < cost:
                    pos, mdir, r, cost = p_new, d_new, r_new, c_new
                    lam = max(lam / 3.0, 1e-12)
                    improved = True
                    break
                lam *= 5.0
            res = math.sqrt(cost)
            if res <= tol * 0.2 or not improved:
                break
        return EpmPose(pos, mdir), math.sqrt(cost), iterations

    pose, res, iters = run(initial_guess)
    total_iters = iters
    if res > tol and restarts:
        best = (pose, res)
        r0 = max(1.6 * limits.min_standoff,
                 np.linalg.norm(initial_guess.position - ipm.position))
        for axis in (Z, -Z, np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]),
                     np.array([0, 1.0, 0]), np.array([0, -1.0, 0])):
            cand_pos = limits.clamp_position(ipm.position + r0 * axis,
                                             ipm.position)
            for mdir in (Z, np.array([1.0, 0.0, 0.0])):
                cand = EpmPose(cand_pos, mdir)
                p, r_c, it = run(cand)
                total_iters += it
                if r_c < best[1]:
                    best = (p, r_c)
                if r_c <= tol:
                    break
            if best[1] <= tol:
                break
        # among feasible candidates prefer the one nearest the guess:
        # the primary run already is; fallbacks replace it only if better
        pose, res = best

    return pose, SolveReport(residual=res, iterations=total_iters,
                             feasible=res <= tol)


def heading_to_wrench(state: VineState, params: VineParams,
                      desired_heading) -> WrenchTarget:
    """Torque target whose equilibrium aligns the tip with a heading.

    The needed torque is the restoration moment at the deflection that
    rotates the base tangent onto the heading, directed along the bend
    axis; the force target is zero with low weight.
    """
    h = np.asarray(desired_heading, dtype=float)
    h = h / np.linalg.norm(h)
    t = state.base_tangent
    c = float(np.clip(t @ h, -1.0, 1.0))
    if c < 0.0:
        raise HeadingRangeError("heading lies behind the base tangent")
    theta_des = math.acos(c)
    axis = np.cross(t, h)
    axis_norm = np.linalg.norm(axis)
    if axis_norm < 1e-12:
        torque = np.zeros(3)
    else:
        torque = (restoration_moment(theta_des, state.pressure_P, params)
                  * axis / axis_norm)
    return WrenchTarget(force=np.zeros(3), torque=torque,
                        force_weight=1e-4, torque_weight=1.0)


def circular_epm_trajectory(length_l: float, height: float,
                            angle_range: tuple[float, float],
                            step: float,
                            moment_angle: float = 0.0) -> list[EpmPose]:
    """EPM poses on a circle of radius length_l about the proximal pivot.

    Poses lie at constant height with the moment tangent to the steering
    plane; moment_angle rotates it in-plane from the direction of travel
    toward the circle center (0 keeps it along the travel tangent).
    Both endpoints are included.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    a0, a1 = angle_range
    n = max(0, int(math.floor((a1 - a0) / step + 1e-9)))
    angles = [a0 + k * step for k in range(n + 1)]
    if abs(angles[-1] - a1) > 1e-12:
        angles.append(a1)
    poses = []
    cg, sg = math.cos(moment_angle), math.sin(moment_angle)
    for a in angles:
        pos = np.array([length_l * math.cos(a), length_l * math.sin(a),
                        height])
        tangent = np.array([-math.sin(a), math.cos(a), 0.0])
        inward = np.array([-math.cos(a), -math.sin(a), 0.0])
        poses.append(EpmPose(pos, cg * tangent + sg * inward))
    return poses


def suspension_setpoint(
    state: VineState,
    params: VineParams,
    epm_height: float,
    *,
    epm_moment: float,
    tip_moment: float,
    limits: WorkspaceLimits,
    tol: float = 2e-3,
    lift_bias: float = 0.0,
    steering_torque=None,
    initial_guess: EpmPose | None = None,
) -> tuple[EpmPose, SolveReport]:
    """EPM pose holding the tip off the lumen wall at a given height.

    Constrains the vertical magnetic force to the tip weight minus the
    vertical component of the vine's elastic reaction at the current
    deflection, together with a torque target (zero by default).
    Lateral pull is left free: the EPM z coordinate is pinned at
    tip z + epm_height and the solution leads the tip laterally, since a
    coaxial EPM can produce neither steering torque nor a sub-attraction
    vertical force.

    Args:
        lift_bias: Extra vertical force as a fraction of tip weight;
            a small positive bias sets the suspended ride height above
            the lumen centerline.
        steering_torque: Optional torque target (N*m) bending the tip
            toward a desired heading while suspended.
        initial_guess: Warm start, e.g. the previous setpoint, keeping
            consecutive solutions on one branch.

    With nothing to lift (weightless tip, straight vine, no steering)
    the setpoint degenerates to the symmetric pose directly above the
    tip.
    """
    pose = tip_pose(state)
    tip = pose.tip_position

    lift = params.tip_mass * GRAVITY * (1.0 + lift_bias)
    if state.deflection_theta > 0:
        tau_g = restoration_moment(state.deflection_theta, state.pressure_P,
                                   params)
        lever = np.linalg.norm(tip - state.base_position)
        t, n1 = state.base_tangent, state.base_normal
        n2 = np.cross(t, n1)
        n = (math.cos(state.bend_azimuth) * n1
             + math.sin(state.bend_azimuth) * n2)
        if lever > 1e-9:
            support_z = -(tau_g / lever) * float(n @ Z)
            lift -= support_z

    torque = (np.zeros(3) if steering_torque is None
              else np.asarray(steering_torque, dtype=float))
    overhead = EpmPose(tip + epm_height * Z, Z)
    if (abs(lift) < 1e-12 and state.deflection_theta == 0.0
            and not np.any(torque)):
        return overhead, SolveReport(residual=0.0, iterations=0, feasible=True)

    if steering_torque is None:
        # pure hover is solved in the vertical plane of the tip axis;
        # out-of-plane offsets only multiply equivalent solutions
        axis = pose.tip_tangent - (pose.tip_tangent @ Z) * Z
        lat = (np.cross(Z, axis / np.linalg.norm(axis))
               if np.linalg.norm(axis) > 1e-9 else None)
    else:
        lat = None
    box_lo = limits.box_lo.copy()
    box_hi = limits.box_hi.copy()
    if lat is not None:
        # pin the across-track coordinate dominating lat
        k = int(np.argmax(np.abs(lat)))
        box_lo[k] = box_hi[k] = tip[k]
    plane = WorkspaceLimits(
        min_standoff=limits.min_standoff,
        box_lo=np.array([box_lo[0], box_lo[1], tip[2] + epm_height]),
        box_hi=np.array([box_hi[0], box_hi[1], tip[2] + epm_height]),
        max_speed=limits.max_speed)
    target = WrenchTarget(force=np.array([0.0, 0.0, lift]), torque=torque,
                          force_weight=1.0, torque_weight=1.0,
                          force_axis_weights=np.array([0.0, 0.0, 1.0]))
    ipm = DipoleSource(tip, tip_moment * pose.tip_tangent)
    if initial_guess is not None:
        guess = EpmPose(plane.clamp_position(initial_guess.position,
                                             ipm.position),
                        initial_guess.moment_dir)
        return solve_epm_pose(target, ipm, plane, guess, epm_moment, tol=tol,
                              restarts=False)

    # fresh solve: try the symmetric pose, then leading/trailing ansatz
    # poses with the moment tilted back past vertical
    axis = pose.tip_tangent - (pose.tip_tangent @ Z) * Z
    axis_n = np.linalg.norm(axis)
    axis = axis / axis_n if axis_n > 1e-9 else np.array([1.0, 0.0, 0.0])
    candidates = [overhead]
    psi = 2.06  # rad from the track axis, up and backward
    for s in (1.0, -1.0):
        mdir = math.cos(s * psi) * axis + math.sin(s * psi) * Z
        mdir /= np.linalg.norm(mdir)
        candidates.append(EpmPose(tip + s * 0.8 * epm_height * axis
                                  + epm_height * Z, mdir))
    best = None
    for cand in candidates:
        guess = EpmPose(plane.clamp_position(cand.position, ipm.position),
                        cand.moment_dir)
        solved, report = solve_epm_pose(target, ipm, plane, guess, epm_moment,
                                        tol=tol, restarts=False)
        if best is None or report.residual < best[1].residual:
            best = (solved, report)
        if report.feasible:
            break
    return best


def teleop_map(command, current: EpmPose, limits: WorkspaceLimits,
               dt: float, ipm_position=None) -> EpmPose:
    """Integrate a normalized 6-axis command into a new EPM pose.

    The first three axes command Cartesian velocity (scaled by
    max_speed), the last three angular velocity of the moment direction
    (scaled by max_ang_speed).  The result is clamped to the bounding
    box and, when the tip position is known, to the minimum standoff.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cmd = np.clip(np.asarray(command, dtype=float).reshape(6), -1.0, 1.0)
    pos = current.position + cmd[:3] * limits.max_speed * dt
    omega = cmd[3:] * limits.max_ang_speed
    angle = np.linalg.norm(omega) * dt
    mdir = _rotate(current.moment_dir, omega, angle)
    mdir = mdir / np.linalg.norm(mdir)
    pos = limits.clamp_position(pos, ipm_position)
    return EpmPose(pos, mdir)
