"""Dipole field/gradient/wrench tests against closed forms and finite differences."""

import math

import numpy as np
import pytest

from magvine.magnetics import (
    MU0,
    DipoleSource,
    FieldSingularityError,
    MagnetSpec,
    MagnetSpecError,
    dipole_field,
    dipole_gradient,
    magnetic_force,
    magnetic_torque,
    moment_from_spec,
    wrench_on_ipm,
)

Z = np.array([0.0, 0.0, 1.0])
X = np.array([1.0, 0.0, 0.0])


def fd_gradient(source, point, h=1e-6):
    """Central-difference gradient of dipole_field, the independent oracle."""
    G = np.zeros((3, 3))
    for j in range(3):
        dp = np.zeros(3)
        dp[j] = h
        Bp = dipole_field(source, point + dp)
        Bm = dipole_field(source, point - dp)
        G[:, j] = (Bp - Bm) / (2.0 * h)
    return G


def random_configuration(rng):
    """A nonsingular source/point pair with O(1) moment at O(0.1 m) range."""
    pos = rng.uniform(-0.2, 0.2, 3)
    moment = rng.uniform(-5.0, 5.0, 3)
    offset = rng.uniform(-0.3, 0.3, 3)
    while np.linalg.norm(offset) < 0.05:
        offset = rng.uniform(-0.3, 0.3, 3)
    return DipoleSource(pos, moment), pos + offset


class TestMomentFromSpec:
    def test_ipm_magnitude(self):
        # 11 mm x 22 mm cylinder at Br = 1.48 T, evaluated by hand:
        v = math.pi * 0.0055**2 * 0.022
        expected = 1.48 * v / MU0
        spec = MagnetSpec(diameter=0.011, length=0.022, remanence_Br=1.48)
        m = moment_from_spec(spec, Z)
        assert np.linalg.norm(m) == pytest.approx(expected, abs=1e-12)
        assert np.linalg.norm(m) == pytest.approx(2.462, abs=1e-3)

    def test_epm_magnitude(self):
        spec = MagnetSpec(diameter=0.101, length=0.101, remanence_Br=1.48)
        m = moment_from_spec(spec, Z)
        assert np.linalg.norm(m) == pytest.approx(952.9, abs=0.5)

    def test_zero_remanence_rejected(self):
        with pytest.raises(MagnetSpecError):
            MagnetSpec(diameter=0.01, length=0.02, remanence_Br=0.0)

    def test_nonpositive_dimensions_rejected(self):
        with pytest.raises(MagnetSpecError):
            MagnetSpec(diameter=-0.01, length=0.02)
        with pytest.raises(MagnetSpecError):
            MagnetSpec(diameter=0.01, length=0.0)

    def test_non_unit_axis_rejected(self):
        with pytest.raises(ValueError):
            moment_from_spec(MagnetSpec(diameter=0.01, length=0.02),
                             [1.0, 1.0, 0.0])


class TestDipoleField:
    def test_on_axis(self):
        src = DipoleSource(np.zeros(3), Z)
        B = dipole_field(src, np.array([0.0, 0.0, 0.1]))
        # closed form mu0 m / (2 pi d^3)
        expected = MU0 * 1.0 / (2.0 * math.pi * 0.1**3)
        assert B == pytest.approx([0.0, 0.0, expected], rel=1e-12)
        assert B[2] == pytest.approx(2.0e-4, rel=1e-9)

    def test_equatorial(self):
        src = DipoleSource(np.zeros(3), Z)
        B = dipole_field(src, np.array([0.1, 0.0, 0.0]))
        expected = -MU0 * 1.0 / (4.0 * math.pi * 0.1**3)
        assert B == pytest.approx([0.0, 0.0, expected], rel=1e-12)
        assert B[2] == pytest.approx(-1.0e-4, rel=1e-9)

    def test_zero_moment(self):
        src = DipoleSource(np.zeros(3), np.zeros(3))
        assert np.all(dipole_field(src, np.array([0.0, 0.1, 0.0])) == 0.0)

    def test_even_in_separation_sign(self):
        rng = np.random.default_rng(7)
        src, pt = random_configuration(rng)
        mirrored = DipoleSource(2 * pt - src.position, src.moment)
        np.testing.assert_allclose(dipole_field(src, pt),
                                   dipole_field(mirrored, pt), rtol=1e-12)

    def test_singularity(self):
        src = DipoleSource(np.zeros(3), Z)
        with pytest.raises(FieldSingularityError):
            dipole_field(src, np.zeros(3))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        src, _ = random_configuration(rng)
        pts = rng.uniform(0.05, 0.3, (8, 3))
        batch = dipole_field(src, pts)
        for k in range(8):
            np.testing.assert_allclose(batch[k], dipole_field(src, pts[k]))


class TestDipoleGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            src, pt = random_configuration(rng)
            G = dipole_gradient(src, pt)
            G_fd = fd_gradient(src, pt)
            assert np.linalg.norm(G - G_fd) <= 1e-6 * np.linalg.norm(G_fd)

    def test_symmetric_traceless(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            src, pt = random_configuration(rng)
            G = dipole_gradient(src, pt)
            scale = np.linalg.norm(G)
            assert np.linalg.norm(G - G.T) <= 1e-12 * scale
            assert abs(np.trace(G)) <= 1e-12 * scale

    def test_coaxial_force_composition(self):
        # axial-axial entry composed with the force law gives the
        # closed-form coaxial attraction 3 mu0 m_e m_i / (2 pi d^4)
        d = 0.17
        src = DipoleSource(np.zeros(3), Z)
        G = dipole_gradient(src, np.array([0.0, 0.0, d]))
        F = magnetic_force(G, Z)
        expected = 3.0 * MU0 / (2.0 * math.pi * d**4)
        assert F[2] == pytest.approx(-expected, rel=1e-9)  # pulled back toward source

    def test_zero_moment(self):
        src = DipoleSource(np.zeros(3), np.zeros(3))
        assert np.all(dipole_gradient(src, np.array([0.1, 0.0, 0.0])) == 0.0)


class TestTorque:
    def test_aligned_gives_zero(self):
        assert np.all(magnetic_torque(2.0 * Z, 0.3 * Z) == 0.0)

    def test_hand_cross_product(self):
        # m_i = 2.462 xhat, B = 0.0465 zhat -> tau = 0.1145 along -yhat
        tau = magnetic_torque(2.462 * X, 0.0465 * Z)
        assert tau[1] == pytest.approx(-2.462 * 0.0465, rel=1e-12)
        assert np.linalg.norm(tau) == pytest.approx(0.1145, abs=2e-4)
        assert tau[0] == tau[2] == 0.0

    def test_bilinear_in_field(self):
        rng = np.random.default_rng(5)
        m = rng.uniform(-1, 1, 3)
        B = rng.uniform(-1, 1, 3)
        np.testing.assert_allclose(magnetic_torque(m, 3.5 * B),
                                   3.5 * magnetic_torque(m, B), rtol=1e-12)


class TestForce:
    def test_coaxial_attraction(self):
        src = DipoleSource(np.zeros(3), Z)
        G = dipole_gradient(src, np.array([0.0, 0.0, -0.1]))
        F = magnetic_force(G, Z)
        assert np.linalg.norm(F) == pytest.approx(6.0e-3, rel=1e-9)
        assert F[2] > 0  # toward the source above

    def test_zero_moment(self):
        src = DipoleSource(np.zeros(3), Z)
        G = dipole_gradient(src, np.array([0.0, 0.0, 0.1]))
        assert np.all(magnetic_force(G, np.zeros(3)) == 0.0)

    def test_newtons_third_law(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a, pt = random_configuration(rng)
            b = DipoleSource(pt, rng.uniform(-3, 3, 3))
            F_ab = wrench_on_ipm(a, b).force
            F_ba = wrench_on_ipm(b, a).force
            assert np.linalg.norm(F_ab + F_ba) <= 1e-9 * np.linalg.norm(F_ab)


class TestWrenchOnIpm:
    def test_decay_when_separation_doubles(self):
        epm = DipoleSource(np.array([0.0, 0.0, 0.15]), 50.0 * X)
        ipm_near = DipoleSource(np.zeros(3), 2.0 * Z)
        epm_far = DipoleSource(np.array([0.0, 0.0, 0.30]), 50.0 * X)
        near = wrench_on_ipm(epm, ipm_near)
        far = wrench_on_ipm(epm_far, ipm_near)
        assert np.linalg.norm(far.torque) == pytest.approx(
            np.linalg.norm(near.torque) / 8.0, rel=1e-9)
        assert np.linalg.norm(far.force) == pytest.approx(
            np.linalg.norm(near.force) / 16.0, rel=1e-9)

    def test_coaxial_pair_pure_axial_force(self):
        epm = DipoleSource(np.array([0.0, 0.0, 0.1]), 10.0 * Z)
        ipm = DipoleSource(np.zeros(3), 1.0 * Z)
        w = wrench_on_ipm(epm, ipm)
        assert np.all(w.torque == 0.0)
        assert w.force[0] == w.force[1] == 0.0
        assert w.force[2] > 0.0

    def test_paper_scale_attraction(self):
        epm = DipoleSource(np.array([0.0, 0.0, 0.1]), 952.9 * Z)
        ipm = DipoleSource(np.zeros(3), 2.462 * Z)
        w = wrench_on_ipm(epm, ipm)
        assert np.linalg.norm(w.force) == pytest.approx(14.1, rel=0.01)

    def test_torque_perpendicular_to_moment(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            epm, pt = random_configuration(rng)
            ipm = DipoleSource(pt, rng.uniform(-3, 3, 3))
            w = wrench_on_ipm(epm, ipm)
            bound = 1e-12 * np.linalg.norm(w.torque) * np.linalg.norm(ipm.moment)
            assert abs(w.torque @ ipm.moment) <= max(bound, 1e-30)


def rotation_matrix(axis, angle):
    """Rodrigues rotation, kept independent of any library helper."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


class TestProperties:
    def test_decay_law_slopes(self):
        # log-log regression of |tau| and |F| vs separation over [0.1, 0.3] m
        epm_moment = 30.0 * np.array([0.3, 0.8, 0.52])
        ipm_moment = 1.7 * np.array([0.9, -0.1, 0.42])
        direction = np.array([0.48, 0.6, 0.64])
        seps = np.linspace(0.1, 0.3, 25)
        taus, forces = [], []
        for d in seps:
            epm = DipoleSource(d * direction, epm_moment)
            ipm = DipoleSource(np.zeros(3), ipm_moment)
            w = wrench_on_ipm(epm, ipm)
            taus.append(np.linalg.norm(w.torque))
            forces.append(np.linalg.norm(w.force))
        slope_tau = np.polyfit(np.log(seps), np.log(taus), 1)[0]
        slope_force = np.polyfit(np.log(seps), np.log(forces), 1)[0]
        assert abs(slope_tau + 3.0) < 1e-3
        assert abs(slope_force + 4.0) < 1e-3

    def test_frame_equivariance(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            epm, pt = random_configuration(rng)
            ipm = DipoleSource(pt, rng.uniform(-3, 3, 3))
            w = wrench_on_ipm(epm, ipm)
            R = rotation_matrix(rng.uniform(-1, 1, 3), rng.uniform(0, 2 * math.pi))
            epm_r = DipoleSource(R @ epm.position, R @ epm.moment)
            ipm_r = DipoleSource(R @ ipm.position, R @ ipm.moment)
            w_r = wrench_on_ipm(epm_r, ipm_r)
            scale = np.linalg.norm(w.force) + np.linalg.norm(w.torque)
            assert np.linalg.norm(w_r.force - R @ w.force) <= 1e-9 * scale
            assert np.linalg.norm(w_r.torque - R @ w.torque) <= 1e-9 * scale
