import math

import numpy as np
import pytest
from scipy.integrate import quad

from reaper_desing.cylsolver import (cylinder_grid, decay_norm, default_steps,
                                     smallest_eigenvalue,
                                     solve_cylinder_dirichlet)


def laplacian_residual(w, s, nz):
    """Interior residual w_ss + w_zz (FD in s, spectral in z)."""
    hs = s[1] - s[0]
    wss = (w[2:, :] - 2 * w[1:-1, :] + w[:-2, :]) / hs**2
    wh = np.fft.rfft(w, axis=1)
    k = np.arange(wh.shape[1])
    wzz = np.fft.irfft(-(k**2)[None, :] * wh, n=nz, axis=1)[1:-1]
    return wss + wzz


class TestHarmonic:
    def test_closed_form_single_mode(self):
        l, ns, nz = 10.0, 401, 64
        s, z = cylinder_grid(l, ns, nz)
        f = np.cos(3 * z) + 0.5 * np.sin(z)
        w, _ = solve_cylinder_dirichlet(np.zeros((ns, nz)), f, l)
        S = s[:, None]
        exact = (np.sinh(3 * (l - S)) / math.sinh(3 * l) * np.cos(3 * z)
                 + 0.5 * np.sinh(1 * (l - S)) / math.sinh(1 * l) * np.sin(z))
        assert np.max(np.abs(w - exact)) < 1e-8

    def test_constant_boundary_returns_zero(self):
        l, ns, nz = 10.0, 201, 32
        w, _ = solve_cylinder_dirichlet(np.zeros((ns, nz)), np.full(nz, 3.7), l)
        assert np.max(np.abs(w)) < 1e-13

    def test_max_principle_twenty_random(self):
        rng = np.random.default_rng(7)
        l, ns, nz = 10.0, 201, 64
        for _ in range(20):
            f = rng.standard_normal(nz)
            w, _ = solve_cylinder_dirichlet(np.zeros((ns, nz)), f, l)
            boundary_sup = np.max(np.abs(w[0]))
            assert np.max(np.abs(w)) <= 2.0 * boundary_sup + 1e-12

    def test_boundary_values_match_data_mod_constant(self):
        l, ns, nz = 8.0, 161, 32
        _, z = cylinder_grid(l, ns, nz)
        f = np.sin(2 * z) - 0.3 * np.cos(z)
        w, _ = solve_cylinder_dirichlet(np.zeros((ns, nz)), f, l)
        assert np.allclose(w[0], f - f.mean(), atol=1e-10)


class TestModeZero:
    def test_against_quadrature_oracle(self):
        l, ns, nz = 10.0, 801, 8
        s, _ = cylinder_grid(l, ns, nz)
        gamma = 0.7
        E = np.repeat(np.exp(-gamma * s)[:, None], nz, axis=1)
        w, _ = solve_cylinder_dirichlet(E, None, l)

        def oracle(s0):
            return quad(lambda r: (r - s0) * math.exp(-gamma * r), s0, l)[0]

        for i in (0, 100, 400, 700):
            assert w[i, 0] == pytest.approx(oracle(s[i]), abs=1e-9)

    def test_far_end_flat(self):
        l, ns, nz = 10.0, 801, 8
        s, _ = cylinder_grid(l, ns, nz)
        E = np.repeat(np.exp(-s)[:, None], nz, axis=1)
        w, _ = solve_cylinder_dirichlet(E, None, l)
        assert abs(w[-1, 0]) < 1e-12
        assert abs((w[-1, 0] - w[-2, 0]) / (s[1] - s[0])) < 1e-6


class TestParticular:
    def test_manufactured_solution(self):
        # w* = sin(pi s / l) cos(2 z): E = -(pi/l)^2 w* - 4 w*
        l = 10.0
        ns, nz = default_steps(l)
        s, z = cylinder_grid(l, ns, nz)
        wstar = np.sin(math.pi * s / l)[:, None] * np.cos(2 * z)[None, :]
        E = -((math.pi / l)**2 + 4.0) * wstar
        w, _ = solve_cylinder_dirichlet(E, None, l)
        assert np.max(np.abs(w - wstar)) < 1e-5

    def test_residual_small(self):
        rng = np.random.default_rng(3)
        l, nz = 10.0, 32
        ns = 2001
        s, z = cylinder_grid(l, ns, nz)
        E = (np.exp(-0.5 * s)[:, None]
             * np.cos(3 * z)[None, :] * rng.uniform(0.5, 1.5))
        w, _ = solve_cylinder_dirichlet(E, None, l)
        res = laplacian_residual(w, s, nz) - E[1:-1]
        assert np.max(np.abs(res)) < 1e-4

    def test_weighted_bound(self):
        # ||w||_gamma <= 20 ||E||_gamma when l >= 40 / gamma and f = 0
        gamma = 0.7
        l = 40.0 / gamma
        ns, nz = 1201, 32
        s, z = cylinder_grid(l, ns, nz)
        E = np.exp(-gamma * s)[:, None] * (1.0 + 0.5 * np.cos(2 * z))[None, :]
        w, _ = solve_cylinder_dirichlet(E, None, l)
        assert decay_norm(w, s, gamma) <= 20.0 * decay_norm(E, s, gamma)


class TestPerturbed:
    def test_fixed_point_small_potential(self):
        # (L0 + q) w = E with small q: manufactured via the flat solve
        l, ns, nz = 10.0, 401, 32
        s, z = cylinder_grid(l, ns, nz)
        q = 0.05 * np.exp(-s)[:, None] * np.ones(nz)[None, :]
        E = np.exp(-0.8 * s)[:, None] * np.cos(z)[None, :]
        w, _ = solve_cylinder_dirichlet(E, None, l, maxiter=50, tol=1e-12,
                                     perturbation=lambda v: q * v)
        # consistency: flat solve of (E - q w) reproduces w
        w2, _ = solve_cylinder_dirichlet(E - q * w, None, l)
        assert np.max(np.abs(w - w2)) < 1e-9


class TestEigenvalue:
    @pytest.mark.parametrize("l", [10.0, 20.0, 40.0])
    def test_poincare_constant(self, l):
        lam = smallest_eigenvalue(l)
        assert lam == pytest.approx(math.pi**2 / l**2, rel=0.01)

    def test_short_cylinder_mode_switch(self):
        # for l < pi the k = 1 band would win; we stay in the k = 0 regime
        assert smallest_eigenvalue(5.0) < 1.0

    def test_perturbed_lower_bound(self):
        l = 20.0
        lam = smallest_eigenvalue(l, perturbation=0.01)
        assert lam >= 1.0 / (2.0 * (4.0 * math.pi**2 + math.pi * l**2))

    def test_eigenvalue_continuous_in_perturbation(self):
        l = 20.0
        lam0 = smallest_eigenvalue(l)
        lam1 = smallest_eigenvalue(l, perturbation=0.01)
        assert abs(lam1 - lam0) <= 0.1 * lam0


class TestBoundaryConstant:
    def test_constant_data_gives_zero_constant(self):
        l, ns, nz = 10.0, 201, 32
        _, B = solve_cylinder_dirichlet(np.zeros((ns, nz)),
                                        np.full(nz, 3.7), l)
        assert abs(B) < 1e-12

    def test_mode_zero_source_sets_constant(self):
        l, ns, nz = 10.0, 801, 8
        s, _ = cylinder_grid(l, ns, nz)
        E = np.repeat(np.exp(-s)[:, None], nz, axis=1)
        w, B = solve_cylinder_dirichlet(E, None, l)
        assert B == pytest.approx(np.mean(w[0]), abs=1e-14)
        assert abs(B) > 1e-3


class TestApproximateKernel:
    @pytest.fixture(scope="class")
    def basis(self):
        from reaper_desing.cylsolver import (approximate_kernel,
                                             scherk_period_mesh)
        patches = scherk_period_mesh(math.pi / 4, h=0.15)
        return approximate_kernel(patches, c=0.3, epsilon_h=1e-3)

    def test_exactly_two_symmetric_modes(self, basis):
        assert len(basis.values) == 2
        assert basis.gap > 1.0

    def test_correlation_with_translation_fields(self, basis):
        assert np.all(basis.correlations > 0.99)

    def test_h_orthonormal(self, basis):
        sys_ = basis.system
        w = sys_.mass_weights(basis.epsilon_h)
        flats = [sys_.gather(v) for v in basis.vectors]
        for i, a in enumerate(flats):
            for j, b in enumerate(flats):
                ip = float(np.sum(w * a * b))
                assert ip == pytest.approx(1.0 if i == j else 0.0, abs=1e-8)
