import math

import numpy as np
import pytest

from reaper_desing.desing import (apply_tetrad_map, apply_z1, apply_z2,
                                  build_desing_surface, build_wing,
                                  build_wing_patch, invert_tetrad_map,
                                  invert_z1, kappa_map, pivots, region_tags,
                                  straighten, wing_reaper_frame)
from reaper_desing.discgeo import fundamental_forms
from reaper_desing.scherk import ScherkSurface, asymptote_offset, wing_angle
from reaper_desing.tetrads import Tetrad, complete_tetrad, tetrad_angles

TAU = 0.1
DELTA_S = 0.1


def sample_tetrad():
    return complete_tetrad(0.795, 2.36, 0.008, 0.005)


def balanced_tetrad(theta=None, theta_r=0.3):
    th = math.pi / 4 if theta is None else theta
    return complete_tetrad(th + theta_r, math.pi - th + theta_r, 0.0, 0.0)


class TestDislocation:
    def test_identity_inside_unit_cylinder(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(-0.6, 0.6, (50, 3))
        assert np.allclose(apply_z1(p, 0.03), p, atol=0)

    def test_identity_on_second_and_fourth_quadrant(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0.5, 6.0, (40, 3))
        p[:20, 0] *= -1.0          # second quadrant
        p[20:, 1] *= -1.0          # fourth quadrant
        assert np.allclose(apply_z1(p, 0.03), p, atol=0)

    def test_exact_rotation_in_first_quadrant_sector(self):
        phi = 0.02
        ang = np.linspace(0.3, math.pi / 2 - 0.3, 9)
        p = np.stack([3.0 * np.cos(ang), 3.0 * np.sin(ang), ang], axis=-1)
        q = apply_z1(p, phi)
        expected = np.stack([3.0 * np.cos(ang - phi), 3.0 * np.sin(ang - phi),
                             ang], axis=-1)
        assert np.allclose(q, expected, atol=1e-13)

    def test_third_quadrant_counter_rotates(self):
        phi = 0.02
        p = np.array([[-3.0 * math.cos(0.7), -3.0 * math.sin(0.7), 0.5]])
        q = apply_z1(p, phi)
        ang = math.atan2(q[0, 1], q[0, 0])
        assert ang == pytest.approx(-math.pi + 0.7 + phi, abs=1e-13)

    def test_z2_is_conjugate_of_z1(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(-7, 7, (100, 3))
        q1 = apply_z2(p, 0.025)
        refl = p * np.array([-1.0, 1.0, 1.0])
        q2 = apply_z1(refl, -0.025) * np.array([-1.0, 1.0, 1.0])
        assert np.allclose(q1, q2, atol=1e-14)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(-8, 8, (200, 3))
        # largest amplitude at which the angle map stays monotone (the
        # cutoff slope is ~41.7, so 2 delta_theta would not be injective)
        phi = 0.015
        assert np.max(np.abs(invert_z1(apply_z1(p, phi), phi) - p)) < 1e-10
        T = sample_tetrad()
        q = apply_tetrad_map(p, T)
        assert np.max(np.abs(invert_tetrad_map(q, T) - p)) < 1e-10

    def test_tetrad_map_sends_wing_directions_to_beta(self):
        # far out on each Scherk wing axis, the map is an exact rotation
        # taking the wing angle to the tetrad angle beta_i
        T = sample_tetrad()
        ang = tetrad_angles(T)
        th = ang["theta"]
        r = 20.0
        for i in range(4):
            w = wing_angle(th, i + 1) + ang["theta_r"] - ang["theta_r"]
            p = np.array([r * math.cos(w), r * math.sin(w), 0.3])
            q = apply_tetrad_map(p, T)
            got = math.atan2(q[1], q[0]) % (2 * math.pi)
            assert got == pytest.approx(T.beta[i] % (2 * math.pi), abs=1e-12)


class TestKappa:
    def test_pins_pivot_at_s0(self):
        z = np.linspace(-2, 2, 7)
        X = kappa_map(0.1, 1.5, -0.7, 3.0, 0.0 * z, z)
        assert np.allclose(X[:, 0], 1.5, atol=0)
        assert np.allclose(X[:, 1], -0.7, atol=0)
        assert np.allclose(X[:, 2], z, atol=0)

    def test_conormal_at_s0(self):
        # sinh(tau s_i) = tan(angle) makes the s-derivative e[angle]
        tau, angle = 0.08, 0.6
        s_i = math.asinh(math.tan(angle)) / tau
        h = 1e-5
        Xp = kappa_map(tau, 0.0, 0.0, s_i, h, 0.0)
        Xm = kappa_map(tau, 0.0, 0.0, s_i, -h, 0.0)
        t = (Xp - Xm) / (2 * h)
        assert np.allclose(t, [math.cos(angle), math.sin(angle), 0.0],
                           atol=1e-9)

    def test_arclength_isometry(self):
        # first fundamental form is the identity
        tau = 0.12
        s = np.linspace(0.0, 6.0, 5)
        z = np.linspace(0.0, 2.0, 4)
        S, Z = np.meshgrid(s, z, indexing="ij")
        h = 1e-4
        Xu = (kappa_map(tau, 1.0, 2.0, 3.0, S + h, Z)
              - kappa_map(tau, 1.0, 2.0, 3.0, S - h, Z)) / (2 * h)
        Xv = (kappa_map(tau, 1.0, 2.0, 3.0, S, Z + h)
              - kappa_map(tau, 1.0, 2.0, 3.0, S, Z - h)) / (2 * h)
        E = np.einsum("ijk,ijk->ij", Xu, Xu)
        F = np.einsum("ijk,ijk->ij", Xu, Xv)
        G = np.einsum("ijk,ijk->ij", Xv, Xv)
        assert np.max(np.abs(E - 1.0)) < 1e-10
        assert np.max(np.abs(F)) < 1e-10
        assert np.max(np.abs(G - 1.0)) < 1e-10


class TestReaperFrame:
    @pytest.mark.parametrize("i", [0, 1, 2, 3])
    def test_frame_at_pivot(self, i):
        T = sample_tetrad()
        a = 7.75
        phi_i = 0.012
        A, nu = wing_reaper_frame(T, a, i, phi_i, TAU,
                                  np.array([-1e-5, 0.0, 1e-5]), 0.0)
        piv = pivots(T, a)[i]
        assert np.allclose(A[1], piv, atol=1e-13)
        # conormal at s = 0 is e[beta_i + phi_i], for every wing orientation
        t = (A[2] - A[0]) / 2e-5
        w = T.beta[i] + phi_i
        assert np.allclose(t, [math.cos(w), math.sin(w), 0.0], atol=1e-9)
        sign = 1.0 if i % 2 == 0 else -1.0
        assert np.allclose(nu[1], [-sign * math.sin(w), sign * math.cos(w),
                                   0.0], atol=1e-12)

    def test_normal_is_unit_and_orthogonal(self):
        T = sample_tetrad()
        s = np.linspace(0.0, 6.0, 9)
        for i in range(4):
            A, nu = wing_reaper_frame(T, 7.75, i, -0.01, 0.07, s, 0.0)
            assert np.allclose(np.linalg.norm(nu, axis=-1), 1.0, atol=1e-12)
            t = np.gradient(A, s, axis=0)
            dots = np.einsum("ij,ij->i", t, nu)
            assert np.max(np.abs(dots[1:-1])) < 1e-3


@pytest.fixture(scope="module")
def setup():
    T = balanced_tetrad()
    th = tetrad_angles(T)["theta"]
    return T, ScherkSurface(th, 7.75)


class TestWingBuild:

    def test_graph_region_is_exact_graph(self, setup):
        T, surf = setup
        s = np.linspace(1.2, 2.8, 7)
        z = np.linspace(0.0, math.pi, 5)
        S, Z = np.meshgrid(s, z, indexing="ij")
        X, _ = build_wing(T, surf, 0, S, Z, TAU)
        A, nu = wing_reaper_frame(T, surf.a, 0, 0.0, TAU, S, Z)
        f, _ = surf.wing_graph(S, Z, 1, return_ok=True)
        assert np.max(np.abs(X - (A + f[..., None] * nu))) == 0.0

    def test_pure_region_is_reaper(self, setup):
        T, surf = setup
        s = np.linspace(4.2, 5.0, 5) * DELTA_S / TAU
        z = np.linspace(0.0, math.pi, 5)
        S, Z = np.meshgrid(s, z, indexing="ij")
        phi_i = 0.01
        X, _ = build_wing(T, surf, 0, S, Z, TAU, phi_i=phi_i)
        A, _ = wing_reaper_frame(T, surf.a, 0, phi_i, TAU, S, Z)
        assert np.max(np.abs(X - A)) == 0.0

    def test_core_boundary_match(self, setup):
        T, surf = setup
        z = np.linspace(0.0, math.pi, 9)
        X, _ = build_wing(T, surf, 0, 0.0 * z, z, TAU, phi_i=0.02)
        base, d = surf.wing_frame(0.0 * z, z, 1)
        f, _ = surf.wing_graph(0.0 * z, z, 1, return_ok=True)
        mapped = apply_tetrad_map(base + f[..., None] * d, T)
        assert np.max(np.abs(X - mapped)) == 0.0

    def test_seam_continuity(self, setup):
        # no jumps at the cut-off seams: increments on a fine s-line stay
        # proportional to the step
        T, surf = setup
        for seam in (1.0, 3.0 * DELTA_S / TAU, 4.0 * DELTA_S / TAU):
            s = np.linspace(seam - 0.01, seam + 0.01, 41)
            X, _ = build_wing(T, surf, 0, s, 0.4 + 0.0 * s, TAU, phi_i=0.01)
            steps = np.linalg.norm(np.diff(X, axis=0), axis=-1)
            assert np.max(steps) < 2.0 * (s[1] - s[0])

    def test_even_in_z(self, setup):
        T, surf = setup
        s = np.linspace(0.0, 4.0, 9)
        z = 0.7
        Xp, _ = build_wing(T, surf, 0, s, z + 0.0 * s, TAU, phi_i=0.01)
        Xm, _ = build_wing(T, surf, 0, s, -z + 0.0 * s, TAU, phi_i=0.01)
        assert np.allclose(Xp[:, :2], Xm[:, :2], atol=1e-12)
        assert np.allclose(Xp[:, 2], -Xm[:, 2], atol=1e-12)

    def test_pure_region_translator_residual(self, setup):
        # the pure region solves H = tau e_y . nu to discretization roundoff
        T, surf = setup
        p = build_wing_patch(T, surf, 0, TAU, 0.02, 5.0 * DELTA_S / TAU,
                             s_lo=4.0 * DELTA_S / TAU)
        g = fundamental_forms(p)
        m = g.ok & p.owned & (p.sfield >= 4.0 * DELTA_S / TAU + 0.1)
        res = g.H - TAU * g.nu[..., 1]
        assert np.nanmax(np.abs(res[m])) < 1e-8

    def test_region_tags(self):
        s = np.array([-1.0, 0.5, 2.0, 3.5, 4.5]) * DELTA_S / TAU
        s[1] = 0.5
        tags = region_tags(s, TAU, DELTA_S)
        assert list(tags) == [0, 1, 2, 3, 4]


class TestDesingSurface:
    def test_balanced_surface_is_rotated_scherk(self):
        # theta1 = theta2 = 0: the map degenerates to a rotation, so the
        # mapped core is the rotation of the plain core
        T = balanced_tetrad()
        ds = build_desing_surface(T, None, TAU, h=0.3)
        th = tetrad_angles(T)["theta"]
        th_r = tetrad_angles(T)["theta_r"]
        surf = ScherkSurface(th, ds.surf.a)
        R = np.array([[math.cos(th_r), -math.sin(th_r), 0.0],
                      [math.sin(th_r), math.cos(th_r), 0.0],
                      [0.0, 0.0, 1.0]])
        for p in ds.patches:
            if not p.name.startswith("dcore"):
                continue
            back = p.X @ R            # rotate by -th_r
            assert np.max(np.abs(s_implicit(surf, back)[p.valid])) < 1e-8

    def test_pivot_example(self):
        T = balanced_tetrad(theta=math.pi / 4, theta_r=0.0)
        a = 8.0
        piv = pivots(T, a)
        assert np.allclose(piv[0], [a / math.sqrt(2), a / math.sqrt(2), 0.0],
                           atol=1e-13)

    def test_pivot_matches_mapped_asymptote_trace(self):
        # pivot = image under the tetrad map of the unmapped asymptote base
        T = sample_tetrad()
        a = 7.75
        th = tetrad_angles(T)["theta"]
        b = asymptote_offset(th)
        piv = pivots(T, a)
        for i in range(4):
            w = wing_angle(th, i + 1)
            sign = 1.0 if i % 2 == 0 else -1.0
            base = np.array([a * math.cos(w) - sign * b * math.sin(w),
                             a * math.sin(w) + sign * b * math.cos(w), 0.0])
            mapped = apply_tetrad_map(base, T)
            assert np.allclose(mapped, piv[i], atol=1e-10)

    def test_patch_roster_and_mirrors(self):
        T = sample_tetrad()
        ds = build_desing_surface(T, [0.01, 0.0, -0.01, 0.0], TAU, h=0.3)
        names = [p.name for p in ds.patches]
        assert sum(n.startswith("dwing") for n in names) == 4
        assert sum(n.startswith("dcore") for n in names) == 5
        for p in ds.patches:
            if p.name != "dcore_z":
                assert p.mirror_v0 and p.mirror_v1


def s_implicit(surf, pts):
    return np.abs(surf.implicit_value(pts)) / (
        1.0 + np.linalg.norm(surf.implicit_gradient(pts), axis=-1))


class TestStraighten:
    def test_identity_at_zero(self):
        T = sample_tetrad()
        phi = np.array([0.01, -0.005, 0.003, 0.002])
        T2, off = straighten(T, phi, TAU, np.zeros(4), a=7.75)
        assert np.allclose(T2.beta, T.beta, atol=1e-14)
        assert np.max(np.abs(off)) == 0.0

    def test_offsets_vanish_at_solution(self):
        T = sample_tetrad()
        phi = np.array([0.005, 0.0, -0.004, 0.002])
        phi_p = np.array([0.004, -0.003, 0.002, -0.001])
        T2, off = straighten(T, phi, TAU, phi_p, a=7.75)
        assert np.max(np.abs(off)) <= 1e-9
        # the solved angles track beta + phi' up to the pivot-arm correction
        drift = np.asarray(T2.beta) - np.asarray(T.beta) - phi_p
        assert np.max(np.abs(drift)) < np.max(np.abs(phi_p))

    def test_jacobian_constant_stable(self):
        # |dbeta'/dphi' - I| <= C tau with one C for both tau values; the
        # stable empirical constant comes from the inverse Jacobian, which
        # deviates exactly linearly in tau
        T = sample_tetrad()
        phi = np.array([0.01, -0.005, 0.003, 0.002])
        consts = {}
        for tau in (0.1, 0.05):
            h = 1e-5
            J = np.empty((4, 4))
            for j in range(4):
                pp = np.zeros(4)
                pp[j] = h
                Tp, _ = straighten(T, phi, tau, pp, a=7.75)
                Tm, _ = straighten(T, phi, tau, -pp, a=7.75)
                J[:, j] = (np.asarray(Tp.beta) - np.asarray(Tm.beta)) / (2 * h)
            C = np.max(np.abs(np.linalg.inv(J) - np.eye(4))) / tau
            assert np.max(np.abs(J - np.eye(4))) <= C * tau
            consts[tau] = C
        lo, hi = min(consts.values()), max(consts.values())
        assert hi / lo < 1.05
