import math

import numpy as np
import pytest

from reaper_desing.cylsolver import scherk_period_mesh
from reaper_desing.discgeo import (PatchGrid, apply_linearized_operator,
                                   balancing_integral,
                                   boundary_conormal_integral, fundamental_forms,
                                   gradient_field, laplace_beltrami, masked_d1,
                                   masked_d2, patch_area_weights,
                                   perturb_by_graph, residual_field, weighted_sup)
from reaper_desing.reapers import GrimReaperCurve


def make_patch(name, u, v, fn, mask=None, orient=1.0):
    U, V = np.meshgrid(u, v, indexing="ij")
    X = fn(U, V)
    valid = np.ones(U.shape, dtype=bool) if mask is None else mask(U, V)
    return PatchGrid(name, u, v, X, valid, orient=orient)


def sphere_patch(R, h, rmax=0.6):
    u = np.arange(-rmax - 3 * h, rmax + 3.5 * h, h)

    def fn(U, V):
        W = np.sqrt(np.maximum(R**2 - U**2 - V**2, 0.0))
        return np.stack([U, V, W], axis=-1)

    # orient outward: (Xu x Xv) has positive z-component; outward is +z here
    return make_patch("cap", u, u, fn,
                      mask=lambda U, V: U**2 + V**2 <= rmax**2, orient=1.0)


def soliton_patch(tau, h, s_max=3.0, z_max=0.5):
    r = GrimReaperCurve(0.0, 0.0, tau)
    u = np.arange(-s_max, s_max + h / 2, h)
    v = np.arange(0.0, z_max + h / 2, h)

    def fn(U, V):
        p = r.point(U.ravel()).reshape(U.shape + (2,))
        return np.stack([p[..., 0], p[..., 1], V], axis=-1)

    # curve normal with positive e_y is the (-t2, t1) rotation: orient -1
    return make_patch("reaper", u, v, fn, orient=-1.0), r


class TestMaskedDiff:
    def test_exact_on_quadratics(self):
        h = 0.1
        u = np.arange(0, 1 + h / 2, h)
        U, V = np.meshgrid(u, u, indexing="ij")
        F = 2 * U**2 - 3 * U + 1.0 + 0 * V
        valid = np.ones(U.shape, dtype=bool)
        valid[5, 5] = False  # force one-sided stencils nearby
        d, ok = masked_d1(F, valid, h, 0)
        assert np.allclose(d[ok], (4 * U - 3)[ok], atol=1e-10)
        d2, ok2 = masked_d2(F, valid, h, 0)
        assert np.allclose(d2[ok2], 4.0, atol=1e-9)

    def test_one_sided_d2_exact_on_cubics(self):
        h = 0.05
        u = np.arange(0, 1 + h / 2, h)
        F = u**3
        valid = np.ones(len(u), dtype=bool)
        d2, ok = masked_d2(F[:, None], valid[:, None], h, 0)
        assert np.allclose(d2[ok], (6 * u)[:, None][ok], atol=1e-8)


class TestForms:
    def test_flat_plane(self):
        p = make_patch("plane", np.linspace(0, 1, 11), np.linspace(0, 1, 11),
                       lambda U, V: np.stack([U, V, 0 * U], axis=-1))
        g = fundamental_forms(p)
        assert np.allclose(g.H[g.ok], 0.0, atol=1e-12)
        assert np.allclose(g.detg[g.ok], 1.0, atol=1e-12)

    def test_sphere_curvatures(self):
        R = 2.0
        p = sphere_patch(R, 0.02)
        g = fundamental_forms(p)
        m = g.ok
        # outward normal: H = -2/R, |A|^2 = 2/R^2
        assert np.nanmax(np.abs(g.H[m] + 2.0 / R)) < 2e-3
        assert np.nanmax(np.abs(g.A2[m] - 2.0 / R**2)) < 2e-3

    def test_sphere_convergence_order(self):
        # measured away from the mask rim, where stencils are fully central
        R = 1.5
        errs = []
        for h in (0.04, 0.02):
            p = sphere_patch(R, h)
            g = fundamental_forms(p)
            m = g.ok & (p.X[..., 0]**2 + p.X[..., 1]**2 <= 0.4**2)
            errs.append(np.nanmax(np.abs(g.H + 2.0 / R)[m]))
        order = math.log(errs[0] / errs[1]) / math.log(2.0)
        assert order > 1.7

    def test_cylinder(self):
        R = 1.3
        u = np.linspace(-1.0, 1.0, 81)   # angle
        v = np.linspace(0.0, 1.0, 41)

        def fn(U, V):
            return np.stack([R * np.cos(U), R * np.sin(U), V], axis=-1)

        g = fundamental_forms(make_patch("cyl", u, v, fn, orient=1.0))
        # orient +1: FD normal points outward here; H = -1/R
        assert np.nanmax(np.abs(np.abs(g.H[g.ok]) - 1.0 / R)) < 1e-3


class TestLaplace:
    def test_sphere_eigenfunction(self):
        # v = z/R restricted to the sphere: Delta_S v = -2/R^2 v
        R = 1.0
        p = sphere_patch(R, 0.02, rmax=0.5)
        g = fundamental_forms(p)
        v = p.X[..., 2] / R
        lap, ok = laplace_beltrami(g, v)
        m = ok & (np.hypot(p.X[..., 0], p.X[..., 1]) < 0.4)
        assert np.nanmax(np.abs(lap + 2.0 / R**2 * v)[m]) < 5e-3

    def test_gradient_of_height(self):
        p = make_patch("plane", np.linspace(0, 1, 21), np.linspace(0, 1, 21),
                       lambda U, V: np.stack([U, V, 0 * U], axis=-1))
        g = fundamental_forms(p)
        grad, ok = gradient_field(g, p.X[..., 0] + 2 * p.X[..., 1])
        assert np.allclose(grad[ok], [1.0, 2.0, 0.0], atol=1e-10)


class TestSoliton:
    def test_residual_vanishes(self):
        tau = 0.8
        p, _ = soliton_patch(tau, 0.05)
        rep = residual_field([fundamental_forms(p)], tau, gamma=0.7)
        assert rep.sup < 5e-4

    def test_residual_order(self):
        tau = 0.8
        sups = []
        for h in (0.04, 0.02):
            p, _ = soliton_patch(tau, h)
            sups.append(residual_field([fundamental_forms(p)], tau, 0.7).sup)
        order = math.log(sups[0] / sups[1]) / math.log(2.0)
        assert 1.6 < order < 2.4

    def test_translation_jacobi_fields(self):
        # L(c . nu) = 0 for constant c: translations preserve the soliton
        tau = 0.6
        p, _ = soliton_patch(tau, 0.02)
        g = fundamental_forms(p)
        for c in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0])):
            v = np.einsum("ijk,k->ij", g.nu, c)
            Lv, ok = apply_linearized_operator(g, v, tau)
            m = ok & (np.abs(p.X[..., 0]) < 2.0)
            assert np.nanmax(np.abs(Lv)[m]) < 5e-4


class TestPerturb:
    def test_constant_graph_on_sphere(self):
        R, eps = 2.0, 0.01
        p = sphere_patch(R, 0.02)
        g = fundamental_forms(p)
        p2 = perturb_by_graph(g, np.full(p.valid.shape, eps))
        g2 = fundamental_forms(p2)
        m = g2.ok & (np.hypot(p.X[..., 0], p.X[..., 1]) < 0.45)
        assert np.nanmax(np.abs(g2.H + 2.0 / (R + eps))[m]) < 2e-3

    def test_quadratic_remainder(self):
        # |H(v) - H - L v| = O(|v|^2): Richardson over eps, eps/2
        tau = 0.5
        p, _ = soliton_patch(tau, 0.02)
        g = fundamental_forms(p)
        v0 = np.cos(p.X[..., 0]) * 0.0 + np.exp(-p.X[..., 0]**2)
        rems = []
        for eps in (0.02, 0.01):
            v = eps * v0
            g2 = fundamental_forms(perturb_by_graph(g, v))
            Lv, okL = apply_linearized_operator(g, v, 0.0)
            m = g2.ok & okL & (np.abs(p.X[..., 0]) < 2.0)
            rem = np.nanmax(np.abs(g2.H - g.H - Lv)[m])
            rems.append(rem)
        assert rems[0] / rems[1] > 3.0  # quadratic: factor ~4


class TestIntegrals:
    def test_rectangle_area(self):
        p = make_patch("plane", np.linspace(0, 2, 41), np.linspace(0, 1, 21),
                       lambda U, V: np.stack([U, V, 0 * U], axis=-1))
        g = fundamental_forms(p)
        w = patch_area_weights(g)
        # interior nodes only; the grid covers [0,2]x[0,1] minus a boundary rim
        assert abs(w.sum() - 2.0) < 0.2

    def test_circle_conormal_closes(self):
        t = np.linspace(0, 2 * math.pi, 401)
        pts = np.stack([np.cos(t), np.sin(t), 0 * t], axis=-1)
        n = np.stack([np.cos(t), np.sin(t), 0 * t], axis=-1)
        total = boundary_conormal_integral(pts, n)
        assert np.linalg.norm(total) < 1e-10

    def test_weighted_sup(self):
        s = np.array([[0.0, 1.0, 2.0]])
        f = np.array([[1.0, 1.0, 1.0]])
        m = np.ones_like(f, dtype=bool)
        assert weighted_sup([f], [s], [m], 0.7) == pytest.approx(math.exp(1.4))


class TestBalancing:
    @staticmethod
    def full_period(d):
        # the roster meshes half a z-period; the z-components cancel on the
        # reflected copy and the planar components double
        area = np.array([2 * d["area"][0], 2 * d["area"][1], 0.0])
        bnd = np.array([2 * d["boundary"][0], 2 * d["boundary"][1], 0.0])
        return area, bnd, 2 * d["perimeter"]

    def test_flat_disk_both_sides_vanish(self):
        h = 0.05
        u = np.arange(-1.2, 1.2 + h / 2, h)
        p = make_patch("disk", u, u,
                       lambda U, V: np.stack([U, V, 0 * U], axis=-1),
                       mask=lambda U, V: U**2 + V**2 <= 1.0)
        g = fundamental_forms(p)
        t = np.linspace(0, 2 * math.pi, 401)
        circle = np.stack([np.cos(t), np.sin(t), 0 * t], axis=-1)
        d = balancing_integral([p], [g], boundaries=[(circle, circle.copy())])
        assert np.linalg.norm(d["area"]) < 1e-10
        assert np.linalg.norm(d["boundary"]) < 1e-10

    def test_scherk_period_balanced(self):
        patches = scherk_period_mesh(math.pi / 4, h=0.2)
        area, bnd, perim = self.full_period(balancing_integral(patches))
        assert np.linalg.norm(bnd) < 1e-4            # 2 pi sum v_i = 0
        assert np.linalg.norm(area - bnd) < 1e-4 * perim

    def test_dislocated_conormal_sum(self):
        from reaper_desing.desing import apply_tetrad_map
        from reaper_desing.tetrads import Tetrad, tetrad_angles

        beta0 = np.array([1.0, 3.0, 5.0, 7.0]) * math.pi / 4
        T = Tetrad(tuple(beta0 + [0.012, -0.008, 0.015, -0.01]))
        th = tetrad_angles(T)["theta"]
        patches = []
        for p in scherk_period_mesh(th, h=0.2, wing_s=8.0):
            patches.append(PatchGrid(p.name, p.u, p.v,
                                     apply_tetrad_map(p.X, T), p.valid,
                                     orient=np.asarray(p.orient).copy(),
                                     owned=p.owned, sfield=p.sfield,
                                     mirror_v0=p.mirror_v0,
                                     mirror_v1=p.mirror_v1,
                                     meta=dict(p.meta)))
        area, bnd, perim = self.full_period(balancing_integral(patches))
        want = 2 * math.pi * sum(np.array([math.cos(b), math.sin(b), 0.0])
                                 for b in T.beta)
        assert np.linalg.norm(want) > 0.01           # genuinely dislocated
        assert np.linalg.norm(bnd - want) < 1e-4
        assert np.linalg.norm(area - bnd) < 1e-4 * perim
