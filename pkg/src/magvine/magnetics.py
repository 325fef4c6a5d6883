"""Point-dipole magnetostatics for the EPM/IPM pair.

Field, spatial field gradient, and the resulting force/torque (wrench) on
the internal tip magnet, with both magnets reduced to point dipoles.  Pure
NumPy, no external solvers.

Conventions:
    - World frame with z up, SI units throughout.
    - A cylindrical magnet of remanence Br and volume v carries the moment
      m = Br * v / mu0 along its magnetization axis.
    - The field of a dipole is even in the separation direction, so either
      sign convention for the displacement gives the same B.  The gradient
      is odd in it; here the displacement always runs from the source to
      the evaluation point so that the gradient is the true spatial
      derivative of B at that point (aligned coaxial dipoles attract).
    - The dipole approximation degrades below roughly 1.5 magnet lengths
      of separation; no near-field correction is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Vacuum permeability (T*m/A), exact by definition here
MU0: float = 4.0 * math.pi * 1e-7

# NdFeB N52, used for both magnets unless overridden
DEFAULT_REMANENCE: float = 1.48


class MagnetSpecError(ValueError):
    """Raised for physically invalid magnet geometry or remanence."""


class FieldSingularityError(ValueError):
    """Raised when a field quantity is evaluated at the source position."""


def _as_unit(v, tol: float = 1e-9) -> np.ndarray:
    u = np.asarray(v, dtype=float)
    n = np.linalg.norm(u)
    if abs(n - 1.0) > tol:
        raise ValueError(f"expected a unit vector, got norm {n!r}")
    return u


@dataclass(frozen=True)
class MagnetSpec:
    """Cylindrical permanent magnet: geometry plus remanence.

    axis is the magnetization direction in the magnet's body frame.
    """

    diameter: float
    length: float
    remanence_Br: float = DEFAULT_REMANENCE
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    shape: str = "cylinder"

    def __post_init__(self):
        if self.shape != "cylinder":
            raise MagnetSpecError(f"unsupported magnet shape {self.shape!r}")
        if self.diameter <= 0 or self.length <= 0:
            raise MagnetSpecError(
                f"magnet dimensions must be positive, got "
                f"{self.diameter} x {self.length}"
            )
        if not 0.0 < self.remanence_Br <= 1.5:
            raise MagnetSpecError(
                f"remanence must lie in (0, 1.5] T, got {self.remanence_Br}"
            )
        _as_unit(self.axis)

    @property
    def volume(self) -> float:
        """Magnetic material volume (m^3)."""
        return math.pi * (self.diameter / 2.0) ** 2 * self.length

    @property
    def moment_magnitude(self) -> float:
        """|m| = Br * v / mu0 (A*m^2)."""
        return self.remanence_Br * self.volume / MU0


@dataclass(frozen=True)
class DipoleSource:
    """A point dipole at a world position with moment in A*m^2."""

    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        mom = np.asarray(self.moment, dtype=float).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mom))):
            raise ValueError("dipole position and moment must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "moment", mom)

    @classmethod
    def from_spec(cls, spec: MagnetSpec, position, world_axis) -> "DipoleSource":
        return cls(np.asarray(position, dtype=float),
                   moment_from_spec(spec, world_axis))


@dataclass(frozen=True)
class FieldSample:
    """Field B (T) and its spatial gradient dB_i/dx_j (T/m) at one point."""

    B: np.ndarray
    gradient: np.ndarray


@dataclass(frozen=True)
class Wrench:
    """Force (N) and torque (N*m) pair acting on a rigid body."""

    force: np.ndarray
    torque: np.ndarray


def moment_from_spec(spec: MagnetSpec, world_axis) -> np.ndarray:
    """Equivalent point-dipole moment of a cylindrical magnet.

    Args:
        spec: Magnet geometry and remanence.
        world_axis: Unit magnetization direction in the world frame.

    Returns:
        Moment vector (A*m^2) of magnitude Br*v/mu0 along world_axis.
    """
    axis = _as_unit(world_axis)
    return spec.moment_magnitude * axis


def _separations(source: DipoleSource, point):
    """Displacement(s) from the source to the evaluation point(s).

    Accepts a single (3,) point or an (N, 3) batch; returns (r, dist,
    rhat, was_single).
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    r = pts - source.position
    dist = np.linalg.norm(r, axis=1)
    if np.any(dist <= 0.0):
        raise FieldSingularityError("field evaluated at the dipole position")
    rhat = r / dist[:, None]
    return r, dist, rhat, single


def dipole_field(source: DipoleSource, point) -> np.ndarray:
    """Magnetic field B (T) of a point dipole.

    B = mu0 / (4 pi d^3) * (3 rhat rhat^T - I) m.  Even in rhat, so the
    result is independent of which endpoint the displacement is taken
    from.

    Args:
        source: The dipole.
        point: Evaluation point, (3,) or (N, 3).

    Returns:
        Field vector(s), matching the input shape.
    """
    _, dist, rhat, single = _separations(source, point)
    m = source.moment
    mdotr = rhat @ m
    B = (MU0 / (4.0 * math.pi * dist**3))[:, None] * (
        3.0 * mdotr[:, None] * rhat - m
    )
    return B[0] if single else B


def dipole_gradient(source: DipoleSource, point) -> np.ndarray:
    """Spatial gradient G_ij = dB_i/dx_j (T/m) of the dipole field.

    G = 3 mu0 / (4 pi d^4) * (m rhat^T + rhat m^T + (m.rhat)(I - 5 rhat rhat^T))
    with rhat from the source to the evaluation point.  Symmetric and
    traceless for every nonsingular input.

    Args:
        source: The dipole.
        point: Evaluation point, (3,) or (N, 3).

    Returns:
        (3, 3) gradient, or (N, 3, 3) for a batch of points.
    """
    _, dist, rhat, single = _separations(source, point)
    m = source.moment
    mdotr = rhat @ m
    eye = np.eye(3)
    outer_mr = m[None, :, None] * rhat[:, None, :]
    outer_rr = rhat[:, :, None] * rhat[:, None, :]
    G = (3.0 * MU0 / (4.0 * math.pi * dist**4))[:, None, None] * (
        outer_mr
        + np.swapaxes(outer_mr, 1, 2)
        + mdotr[:, None, None] * (eye - 5.0 * outer_rr)
    )
    return G[0] if single else G


def magnetic_torque(m_i, B) -> np.ndarray:
    """Torque tau = m_i x B (N*m) on a dipole in field B."""
    return np.cross(np.asarray(m_i, dtype=float), np.asarray(B, dtype=float))


def magnetic_force(gradient, m_i) -> np.ndarray:
    """Force F = G^T m_i (N) on a dipole in a field with gradient G.

    Accepts a single (3, 3) gradient or an (N, 3, 3) batch; m_i may be
    (3,) or (N, 3) correspondingly.
    """
    G = np.asarray(gradient, dtype=float)
    m = np.asarray(m_i, dtype=float)
    if G.ndim == 2:
        return G.T @ m
    if m.ndim == 1:
        m = np.broadcast_to(m, (G.shape[0], 3))
    return np.einsum("nji,nj->ni", G, m)


def field_sample(source: DipoleSource, point) -> FieldSample:
    """Field and gradient at a point, bundled."""
    return FieldSample(B=dipole_field(source, point),
                       gradient=dipole_gradient(source, point))


def wrench_on_ipm(epm: DipoleSource, ipm: DipoleSource) -> Wrench:
    """Force and torque exerted on the IPM by the EPM's field.

    Composes field, gradient, torque and force at the IPM position.
    """
    B = dipole_field(epm, ipm.position)
    G = dipole_gradient(epm, ipm.position)
    return Wrench(force=magnetic_force(G, ipm.moment),
                  torque=magnetic_torque(ipm.moment, B))
