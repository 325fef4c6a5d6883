"""Quasi-static mechanics of the pressurized everting body.

Growth force, restoration moment, collapse (buckling) threshold,
constant-curvature forward kinematics of the unconstrained segment, and
the moment-balance equilibrium that sets tip deflection under a magnetic
wrench.

Model notes:
    - Growing force F_g = max(0, P*A/2 - C): a deflated vine pushes
      nothing.
    - Restoration moment tau_g = cr * P * D^3 * theta: the simplest
      dimensionally consistent model monotone in theta, P and D; cr is
      the single calibration knob.
    - Collapse moment M_c = cb * P * (D/2)^3, cb defaulting to pi/2 (the
      classical collapse moment of an inflated cylindrical beam).  A
      deflated vine buckles under any moment.
    - The unconstrained segment bends as a circular arc in a single
      plane; the bend plane is picked from the field direction projected
      onto the tip cross-section.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .magnetics import DipoleSource, dipole_field, dipole_gradient

GRAVITY: float = 9.80665

# Deflection domain margin: equilibria live in [0, pi - EPS]
_THETA_EPS = 1e-6
# Straight-case threshold below which the arc degenerates to a line
_STRAIGHT_TOL = 1e-12


class SolverFailureError(RuntimeError):
    """Equilibrium root finding failed to converge."""


@dataclass(frozen=True)
class VineParams:
    """Mechanical constants of the inflated body and its rigid tip."""

    diameter_D: float = 0.025
    drag_C: float = 0.0
    restoration_coeff_cr: float = 0.155
    collapse_coeff_cb: float = math.pi / 2.0
    tip_mass: float = 0.030
    tip_length: float = 0.035
    tip_diameter: float = 0.020

    def __post_init__(self):
        if self.diameter_D <= 0:
            raise ValueError("vine diameter must be positive")
        if self.drag_C < 0:
            raise ValueError("drag constant must be non-negative")
        if self.restoration_coeff_cr <= 0 or self.collapse_coeff_cb <= 0:
            raise ValueError("restoration/collapse coefficients must be positive")
        if self.tip_diameter >= self.diameter_D:
            raise ValueError("tip must be narrower than the vine body")

    @property
    def cross_section_area(self) -> float:
        return math.pi * self.diameter_D**2 / 4.0


@dataclass(frozen=True)
class VineState:
    """Pose and pneumatic state of the vine at one instant.

    The base frame is the end of the constrained path: base_tangent is
    the growth direction there and base_normal the azimuth reference for
    the bend plane (unit, orthogonal to the tangent).
    """

    base_position: np.ndarray = field(
        default_factory=lambda: np.zeros(3))
    base_tangent: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    base_normal: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    constrained_length: float = 0.0
    unconstrained_length_l: float = 0.1
    pressure_P: float = 10e3
    deflection_theta: float = 0.0
    bend_azimuth: float = 0.0
    tip_roll: float = 0.0

    def __post_init__(self):
        for name in ("base_position", "base_tangent", "base_normal"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).reshape(3))
        if self.pressure_P < 0:
            raise ValueError("pressure must be non-negative")
        if self.constrained_length < 0 or self.unconstrained_length_l < 0:
            raise ValueError("lengths must be non-negative")
        if not 0.0 <= self.deflection_theta < math.pi:
            raise ValueError("deflection must lie in [0, pi)")
        if abs(np.linalg.norm(self.base_tangent) - 1.0) > 1e-9:
            raise ValueError("base tangent must be a unit vector")
        if abs(np.linalg.norm(self.base_normal) - 1.0) > 1e-9:
            raise ValueError("base normal must be a unit vector")
        if abs(self.base_tangent @ self.base_normal) > 1e-9:
            raise ValueError("base normal must be orthogonal to the tangent")

    def with_(self, **kwargs) -> "VineState":
        return replace(self, **kwargs)

    @property
    def total_length(self) -> float:
        return self.constrained_length + self.unconstrained_length_l


@dataclass(frozen=True)
class ArcPose:
    """Tip of the constant-curvature segment."""

    tip_position: np.ndarray
    tip_tangent: np.ndarray
    curvature_kappa: float


@dataclass(frozen=True)
class EquilibriumResult:
    theta: float
    bend_azimuth: float
    buckled: bool
    applied_moment: float
    residual: float
    iterations: int


def growing_force(P: float, params: VineParams) -> float:
    """Tip pushing force of the pressurized body, clamped at zero."""
    if P < 0:
        raise ValueError("pressure must be non-negative")
    return max(0.0, 0.5 * P * params.cross_section_area - params.drag_C)


def restoration_moment(theta: float, P: float, params: VineParams) -> float:
    """Elastic moment resisting a deflection theta at pressure P."""
    if not 0.0 <= theta < math.pi:
        raise ValueError("deflection must lie in [0, pi)")
    return params.restoration_coeff_cr * P * params.diameter_D**3 * theta


def collapse_moment(P: float, params: VineParams) -> float:
    """Bending moment above which the inflated body kinks instead of bending."""
    if P < 0:
        raise ValueError("pressure must be non-negative")
    return params.collapse_coeff_cb * P * (params.diameter_D / 2.0) ** 3


def arc_radius(length: float, theta: float) -> float:
    """Bending radius r = l / theta of a circular arc; inf when straight.

    Accepts any theta > 0 so that observed radii tighter than l/pi (a
    full half-turn) can still be expressed; equilibrium states themselves
    stay within [0, pi).
    """
    if theta <= _STRAIGHT_TOL:
        return math.inf
    return length / theta


def bending_radius(state: VineState) -> float:
    """Bending radius of the unconstrained segment; inf when straight."""
    return arc_radius(state.unconstrained_length_l, state.deflection_theta)


def _bend_frame(state: VineState, azimuth: float):
    """Unit vectors (t, n, e_b): tangent, in-plane normal, bend axis."""
    t = state.base_tangent
    n1 = state.base_normal
    n2 = np.cross(t, n1)
    n = math.cos(azimuth) * n1 + math.sin(azimuth) * n2
    return t, n, np.cross(t, n)


def arc_tip(length: float, theta, t: np.ndarray, n: np.ndarray,
            base: np.ndarray):
    """Tip position(s) and tangent(s) of the arc, vectorized over theta."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    pos = np.empty((th.size, 3))
    tan = (np.cos(th)[:, None] * t + np.sin(th)[:, None] * n)
    small = th <= _STRAIGHT_TOL
    if np.any(small):
        pos[small] = base + length * t
    big = ~small
    if np.any(big):
        r = length / th[big]
        pos[big] = (base
                    + (r * np.sin(th[big]))[:, None] * t
                    + (r * (1.0 - np.cos(th[big])))[:, None] * n)
    return pos, tan


def tip_pose(state: VineState) -> ArcPose:
    """Constant-curvature forward kinematics of the unconstrained segment."""
    t, n, _ = _bend_frame(state, state.bend_azimuth)
    pos, tan = arc_tip(state.unconstrained_length_l, state.deflection_theta,
                       t, n, state.base_position)
    l = state.unconstrained_length_l
    kappa = state.deflection_theta / l if l > 0 else 0.0
    return ArcPose(tip_position=pos[0], tip_tangent=tan[0],
                   curvature_kappa=kappa)


def arc_polyline(state: VineState, n_points: int = 33) -> np.ndarray:
    """Sampled points along the unconstrained arc, base to tip inclusive."""
    t, n, _ = _bend_frame(state, state.bend_azimuth)
    fractions = np.linspace(0.0, 1.0, n_points)
    thetas = fractions * state.deflection_theta
    lengths = fractions * state.unconstrained_length_l
    pts = np.empty((n_points, 3))
    for k, (lk, thk) in enumerate(zip(lengths, thetas)):
        p, _ = arc_tip(lk, thk, t, n, state.base_position)
        pts[k] = p[0]
    return pts


def _pick_azimuth(state: VineState, epm: DipoleSource | None,
                  extra_tip_force, plane_normal):
    """Bend plane selection: the plane containing the projected field.

    Falls back to the projected applied force (magnetic + extra) when the
    lateral field vanishes; returns None when there is nothing to bend
    toward.
    """
    t = state.base_tangent
    straight_tip = state.base_position + state.unconstrained_length_l * t

    candidates = []
    if epm is not None and np.linalg.norm(epm.moment) > 0:
        candidates.append(dipole_field(epm, straight_tip))
    if extra_tip_force is not None:
        candidates.append(np.asarray(extra_tip_force, dtype=float))

    if plane_normal is not None:
        w = np.cross(np.asarray(plane_normal, dtype=float), t)
        wn = np.linalg.norm(w)
        if wn < 1e-12:
            raise ValueError("plane normal parallel to the base tangent")
        w = w / wn
        for v in candidates:
            if abs(v @ w) > 1e-15:
                n1, n2 = state.base_normal, np.cross(t, state.base_normal)
                sgn = 1.0 if v @ w > 0 else -1.0
                return math.atan2(sgn * (w @ n2), sgn * (w @ n1))
        return None

    n1, n2 = state.base_normal, np.cross(t, state.base_normal)
    for v in candidates:
        lat = v - (v @ t) * t
        if np.linalg.norm(lat) > 1e-15:
            return math.atan2(lat @ n2, lat @ n1)
    return None


def equilibrium_deflection(
    epm: DipoleSource | None,
    state: VineState,
    params: VineParams,
    tip_moment: float,
    extra_tip_force=None,
    plane_normal=None,
    theta_init: float | None = None,
    azimuth_init: float | None = None,
    coarse: int = 96,
    max_iter: int = 200,
    moment_tol: float = 1e-9,
) -> EquilibriumResult:
    """Deflection balancing the applied wrench against the restoration moment.

    The applied bending moment at deflection theta is the component, about
    the bend axis, of the magnetic torque on the tip dipole plus the
    moment of the tip forces (magnetic and any extra, e.g. tip weight)
    about the base of the unconstrained segment, with the lever arm taken
    from the constant-curvature chord.  The returned root of
    g(theta) = applied(theta) - tau_g(theta) on [0, pi) is the smallest
    one (continuity from the undeflected branch); a swept solve may pass
    theta_init/azimuth_init from the previous equilibrium, in which case
    the root nearest the previous deflection is tracked instead.  If g
    never changes sign the result is theta = 0 for g(0) < 0 and the
    domain boundary otherwise (wrench dominant at every deflection,
    flagged buckled when above the collapse moment).

    Args:
        epm: External magnet as a dipole, or None for no field.
        state: Current vine state (base frame, length, pressure).
        params: Mechanical constants.
        tip_moment: Magnitude of the tip dipole (A*m^2), directed along
            the tip tangent.
        extra_tip_force: Optional constant force on the tip (N), e.g.
            (0, 0, -m*g) for tip weight.
        plane_normal: When given, the bend plane is constrained to be
            perpendicular to this direction (planar steering under a
            constraining plate).
        theta_init: Previous deflection for branch tracking; None solves
            from the undeflected branch.
        azimuth_init: Previous bend azimuth, kept as-is during tracking.

    Returns:
        EquilibriumResult with theta, bend azimuth, buckled flag, the
        applied moment at theta, the final |g| residual and iteration
        count.

    Raises:
        SolverFailureError: No convergence within max_iter refinement
            rounds.
        FieldSingularityError: The EPM coincides with a candidate tip
            position.
    """
    tracking = theta_init is not None and azimuth_init is not None
    if tracking:
        azimuth = azimuth_init
    else:
        azimuth = _pick_azimuth(state, epm, extra_tip_force, plane_normal)
    l = state.unconstrained_length_l
    if azimuth is None or l <= 0.0:
        return EquilibriumResult(0.0, 0.0, False, 0.0, 0.0, 0)

    base = state.base_position
    f_extra = (np.zeros(3) if extra_tip_force is None
               else np.asarray(extra_tip_force, dtype=float))
    tau_rate = params.restoration_coeff_cr * state.pressure_P * params.diameter_D**3

    def make_applied(t, n, e_b):
        def applied(thetas: np.ndarray) -> np.ndarray:
            pos, tan = arc_tip(l, thetas, t, n, base)
            m_vec = tip_moment * tan
            if epm is not None:
                B = dipole_field(epm, pos)
                G = dipole_gradient(epm, pos)
                torque = np.cross(m_vec, B)
                force = np.einsum("kji,kj->ki", G, m_vec) + f_extra
            else:
                torque = np.zeros_like(pos)
                force = np.broadcast_to(f_extra, pos.shape)
            lever = pos - base
            total = torque + np.cross(lever, force)
            return total @ e_b
        return applied

    applied = make_applied(*_bend_frame(state, azimuth))
    if not tracking and float(applied(np.array([0.0]))[0]) < 0.0:
        # same bending plane, opposite side: bend toward the net moment
        azimuth = azimuth - math.pi if azimuth > 0 else azimuth + math.pi
        applied = make_applied(*_bend_frame(state, azimuth))

    def g(thetas: np.ndarray) -> np.ndarray:
        return applied(thetas) - tau_rate * thetas

    iterations = 0
    grid = vals = None
    if tracking:
        # a tracked branch rarely moves far in one solve: scan a local
        # window first, falling back to the full domain when it fails
        lo_w = max(0.0, theta_init - 0.15)
        hi_w = min(math.pi - _THETA_EPS, theta_init + 0.15)
        wgrid = np.linspace(lo_w, hi_w, 31)
        wvals = g(wgrid)
        iterations += 1
        flips = np.nonzero(np.sign(wvals[:-1]) * np.sign(wvals[1:]) < 0)[0]
        if flips.size:
            mids = 0.5 * (wgrid[flips] + wgrid[flips + 1])
            k = flips[int(np.argmin(np.abs(mids - theta_init)))]
            grid, vals = wgrid, wvals
            sign_change = np.array([k])
    if grid is None:
        grid = np.linspace(0.0, math.pi - _THETA_EPS, coarse + 1)
        vals = g(grid)
        iterations += 1
        sign_change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    exact = np.nonzero(vals == 0.0)[0]
    if exact.size and (not sign_change.size or exact[0] <= sign_change[0]):
        theta_star = float(grid[exact[0]])
        residual = 0.0
    elif not sign_change.size:
        if vals[0] < 0.0:
            return EquilibriumResult(0.0, azimuth, False, float(applied(
                np.array([0.0]))[0]), abs(float(vals[0])), iterations)
        theta_star = float(grid[-1])
        residual = abs(float(vals[-1]))
    else:
        pick = sign_change[0]
        if tracking and sign_change.size > 1:
            mids = 0.5 * (grid[sign_change] + grid[sign_change + 1])
            pick = sign_change[int(np.argmin(np.abs(mids - theta_init)))]
        lo, hi = grid[pick], grid[pick + 1]
        glo = vals[pick]
        theta_star, residual = None, None
        while iterations < max_iter:
            iterations += 1
            sub = np.linspace(lo, hi, 33)
            sv = g(sub)
            flips = np.nonzero(np.sign(sv[:-1]) * np.sign(sv[1:]) < 0)[0]
            if flips.size:
                k = int(flips[0])
                edge = k if abs(sv[k]) <= abs(sv[k + 1]) else k + 1
            else:
                # numerically flat around the root
                edge = int(np.argmin(np.abs(sv)))
            if abs(sv[edge]) < moment_tol or not flips.size:
                theta_star = float(sub[edge])
                residual = abs(float(sv[edge]))
                break
            k = int(flips[0])
            lo, hi, glo = sub[k], sub[k + 1], sv[k]
        if theta_star is None:
            raise SolverFailureError(
                f"no equilibrium after {max_iter} refinement rounds "
                f"(bracket [{lo}, {hi}], g(lo)={glo})")

    m_app = float(applied(np.array([theta_star]))[0])
    # guard keeps the solver residual at a true root from tripping the
    # flag when the collapse moment itself is zero (deflated vine)
    guard = max(1e-8, 10.0 * moment_tol)
    buckled = abs(m_app) > collapse_moment(state.pressure_P, params) + guard
    return EquilibriumResult(theta_star, azimuth, buckled, m_app,
                             residual, iterations)
