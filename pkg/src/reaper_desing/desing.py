"""Dislocated Scherk surfaces: ambient unbalancing maps, wings, straightening.

The maps act on the xy-plane only (z untouched), so periodicity and the
z-mirror symmetry survive.  Z1(phi) rotates the first-quadrant content
clockwise by phi (counterclockwise in the third quadrant), cut off radially
below r = 2 and angularly near the quadrant boundaries; Z2 is its conjugate
by the reflection x -> -x and acts on quadrants two and four.  Composed with
a rigid rotation they realize an arbitrary small dislocation of the tetrad.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence
from .scherk import (ScherkSurface, S_SPLIT, WING_REFLECTIONS,
                     _quad_weight_wing, asymptote_offset, scherk_core_patches,
                     wing_angle)
from .tetrads import Tetrad, tetrad_angles
from .util import DEFAULTS, e_perp, e_vec, gamma1, gamma2, psi_ab, rotz
from .discgeo import PatchGrid

PIVOT_SIGNS = (1.0, -1.0, 1.0, -1.0)


def _angular_cutoff(ang, delta_theta):
    """1 in the interior of the quadrant, 0 within 9 delta_theta of its edges."""
    return (psi_ab(0.0, 9.0 * delta_theta, ang)
            * psi_ab(math.pi / 2, math.pi / 2 - 9.0 * delta_theta, ang))


def _z1_amount(r, ang, phi, delta_theta):
    """Rotation angle of Z1(phi) at polar coordinates (r, ang)."""
    rho = psi_ab(1.0, 2.0, r)
    amount = np.zeros(np.shape(r))
    q1 = (ang > 0) & (ang < math.pi / 2)
    q3 = ang < -math.pi / 2
    amount = np.where(q1, -phi * rho * _angular_cutoff(ang, delta_theta), amount)
    amount = np.where(q3, phi * rho * _angular_cutoff(ang + math.pi, delta_theta),
                      amount)
    return amount


def apply_z1(points, phi, delta_theta=DEFAULTS.delta_theta):
    """The first dislocation map Z1(phi) on (..., 3) points."""
    p = np.asarray(points, dtype=float)
    r = np.hypot(p[..., 0], p[..., 1])
    ang = np.arctan2(p[..., 1], p[..., 0])
    return rotz(p, _z1_amount(r, ang, phi, delta_theta))


def invert_z1(points, phi, delta_theta=DEFAULTS.delta_theta,
              tol: float = 1e-14, maxiter: int = 200):
    """Inverse of Z1(phi) by fixed-point iteration on the polar angle.

    The radius is invariant, so only the source angle is unknown; the
    iteration contracts for |phi| <= 2 delta_theta.
    """
    q = np.asarray(points, dtype=float)
    r = np.hypot(q[..., 0], q[..., 1])
    ang_q = np.arctan2(q[..., 1], q[..., 0])
    ang = ang_q.copy()
    for _ in range(maxiter):
        new = ang_q - _z1_amount(r, ang, phi, delta_theta)
        delta = float(np.max(np.abs(new - ang))) if ang.size else 0.0
        ang = new
        if delta <= tol:
            break
    else:
        raise NoConvergence("dislocation inverse iteration stalled")
    out = q.copy()
    out[..., 0] = r * np.cos(ang)
    out[..., 1] = r * np.sin(ang)
    return out


def invert_z2(points, phi, delta_theta=DEFAULTS.delta_theta):
    q = np.asarray(points, dtype=float).copy()
    q[..., 0] = -q[..., 0]
    q = invert_z1(q, -phi, delta_theta)
    q[..., 0] = -q[..., 0]
    return q


def invert_tetrad_map(points, T: Tetrad, delta_theta=DEFAULTS.delta_theta):
    """Inverse of Z[T] = R(theta_r) o Z1(theta1) o Z2(theta2)."""
    ang = tetrad_angles(T)
    q = rotz(np.asarray(points, dtype=float), -ang["theta_r"])
    q = invert_z1(q, ang["theta1"], delta_theta)
    return invert_z2(q, ang["theta2"], delta_theta)


def apply_z2(points, phi, delta_theta=DEFAULTS.delta_theta):
    """Z2(phi) = R2 o Z1(-phi) o R2 with R2 the reflection x -> -x."""
    q = np.asarray(points, dtype=float).copy()
    q[..., 0] = -q[..., 0]
    q = apply_z1(q, -phi, delta_theta)
    q[..., 0] = -q[..., 0]
    return q


def apply_tetrad_map(points, T: Tetrad, delta_theta=DEFAULTS.delta_theta):
    """Z[T] = R(theta_r) o Z1(theta1) o Z2(theta2)."""
    ang = tetrad_angles(T)
    q = apply_z2(points, ang["theta2"], delta_theta)
    q = apply_z1(q, ang["theta1"], delta_theta)
    return rotz(q, ang["theta_r"])


def pivots(T: Tetrad, a: float):
    """The four bending pivots: core boundary projected to the asymptotic
    planes, offset alternating with the wing index."""
    th = tetrad_angles(T)["theta"]
    b = asymptote_offset(th)
    out = []
    for i, beta in enumerate(T.beta):
        e = e_vec(beta)
        ep = e_perp(beta)
        out.append(np.array([a * e[0] + PIVOT_SIGNS[i] * b * ep[0],
                             a * e[1] + PIVOT_SIGNS[i] * b * ep[1],
                             0.0]))
    return out


# ---------------------------------------------------------------------------
# asymptotic grim reapers (the kappa map) and dislocated wings


def kappa_map(tau: float, x_i: float, y_i: float, s_i: float, s, z):
    """Arclength parametrization of the grim-reaper cylinder through
    (x_i, y_i) whose conormal at s = 0 makes the angle gd(tau * s_i) with
    the x-axis: (gamma1(tau(s+s_i)) - gamma1(tau s_i) + tau x_i, ...)/tau.
    """
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    S, Z = np.broadcast_arrays(s, z)
    u = tau * S + tau * s_i
    out = np.empty(S.shape + (3,))
    out[..., 0] = (gamma1(u) - gamma1(tau * s_i)) / tau + x_i
    out[..., 1] = (gamma2(u) - gamma2(tau * s_i)) / tau + y_i
    out[..., 2] = Z
    return out


def wing_reaper_frame(T: Tetrad, a: float, i: int, phi_i: float, tau: float,
                      s, z):
    """Asymptotic grim-reaper frame (A_i, nu_i) of wing i bent by phi_i.

    A_i is the reaper cylinder through the pivot whose conormal at s = 0 is
    e[beta_i + phi_i]; nu_i is its unit normal, equal to
    PIVOT_SIGNS[i] * e'[beta_i + phi_i] at (0, 0).  Wings pointing in the
    negative-x half plane use the x-reflected reaper (the tangent of the
    arclength curve always has positive x-component).
    """
    omega = T.beta[i] + phi_i
    sign = 1.0 if math.cos(omega) >= 0.0 else -1.0
    tau_si = math.asinh(sign * math.tan(omega))
    piv = pivots(T, a)[i]
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    S, Z = np.broadcast_arrays(s, z)
    A = kappa_map(tau, sign * piv[0], piv[1], tau_si / tau, S, Z)
    A[..., 0] *= sign
    u = tau * S + tau_si
    nu = np.empty(S.shape + (3,))
    nu[..., 0] = -PIVOT_SIGNS[i] * np.tanh(u)
    nu[..., 1] = PIVOT_SIGNS[i] * sign / np.cosh(u)
    nu[..., 2] = 0.0
    return A, nu


def build_wing(T: Tetrad, surf: ScherkSurface, i: int, s, z, tau: float,
               phi_i: float = 0.0, delta_s: float = DEFAULTS.delta_s,
               delta_theta: float = DEFAULTS.delta_theta):
    """Immersion of dislocated wing i: mapped Scherk near the core, blended
    over s in [0, 1] onto the graph of the wing function over the asymptotic
    grim reaper, with the graph term cut off over [3, 4] delta_s / tau.

    Bending by phi_i enters only through the reaper frame; the core term is
    unchanged, so the wing still matches the core boundary at s = 0.
    """
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    S, Z = np.broadcast_arrays(s, z)
    wing_no = i + 1
    base, d = surf.wing_frame(S, Z, wing_no)
    f, ok = surf.wing_graph(S, Z, wing_no, return_ok=True)
    mapped = apply_tetrad_map(base + np.where(ok, f, 0.0)[..., None] * d,
                              T, delta_theta)
    A, nu = wing_reaper_frame(T, surf.a, i, phi_i, tau, S, Z)
    psi_core = psi_ab(1.0, 0.0, S)                       # 1 at the core
    psi_s = psi_ab(4.0 * delta_s / tau, 3.0 * delta_s / tau, S)
    outer = A + (psi_s * np.where(ok, f, 0.0))[..., None] * nu
    X = psi_core[..., None] * mapped + (1.0 - psi_core[..., None]) * outer
    return X, ok


def region_tags(S, tau: float, delta_s: float = DEFAULTS.delta_s):
    """Region of each sample by wing coordinate: 0 core, 1 blend1 [0,1],
    2 graph [1, 3 delta_s/tau], 3 blend2 [.., 4 delta_s/tau], 4 pure."""
    edges = np.array([0.0, 1.0, 3.0 * delta_s / tau, 4.0 * delta_s / tau])
    return np.searchsorted(edges, np.asarray(S, dtype=float), side="right")


def build_wing_patch(T: Tetrad, surf: ScherkSurface, i: int, tau: float,
                     hs: float, s_max: float, phi_i: float = 0.0,
                     z_lo=0.0, z_hi=math.pi,
                     zpad: int = 3, spad: int = 3, s_lo: float = 0.0,
                     delta_s: float = DEFAULTS.delta_s,
                     delta_theta: float = DEFAULTS.delta_theta) -> PatchGrid:
    ns = max(3, int(round((s_max - s_lo) / hs)))
    hs_eff = (s_max - s_lo) / ns
    sg = s_lo + hs_eff * np.arange(-spad, ns + spad + 1)
    nz = max(3, int(round((z_hi - z_lo) / hs)))
    hz = (z_hi - z_lo) / nz
    zg = z_lo + hz * np.arange(-zpad, nz + zpad + 1)
    S, Z = np.meshgrid(sg, zg, indexing="ij")
    X, ok = build_wing(T, surf, i, S, Z, tau, phi_i, delta_s, delta_theta)
    Xu = np.gradient(X, axis=0)
    Xv = np.gradient(X, axis=1)
    # orientation: the continuous global normal (the core convention), which
    # is the *opposite* of the alternating reaper-graph normal on every wing
    _, nu = wing_reaper_frame(T, surf.a, i, phi_i, tau, S, Z)
    orient = np.where(np.einsum("ijk,ijk->ij", np.cross(Xu, Xv), nu) >= 0,
                      -1.0, 1.0)
    owned = (ok & (Z >= z_lo - 1e-12) & (Z <= z_hi + 1e-12)
             & (S >= s_lo - 1e-12) & (S <= s_max + 1e-12))
    mirror0 = abs(z_lo) < 1e-12 or abs(abs(z_lo) - math.pi) < 1e-12
    mirror1 = abs(z_hi - math.pi) < 1e-12 or abs(z_hi - 2 * math.pi) < 1e-12
    return PatchGrid(f"dwing{i + 1}", sg, zg, X, ok, orient=orient,
                     owned=owned, sfield=S.copy(),
                     mirror_v0=mirror0, mirror_v1=mirror1,
                     meta={"kind": "dwing", "wing": i + 1, "phi": phi_i,
                           "beta": T.beta[i], "theta": surf.theta,
                           "partition": owned & (S >= S_SPLIT - 1e-12),
                           "quad_weight": _quad_weight_wing(S, Z, s_max,
                                                            z_lo, z_hi),
                           "regions": region_tags(S, tau, delta_s)})


@dataclass
class DesingSurface:
    tetrad: Tetrad
    surf: ScherkSurface
    tau: float
    patches: list
    phi: tuple = (0.0, 0.0, 0.0, 0.0)
    pivots: list = field(default_factory=list)


def build_desing_surface(T: Tetrad, phi=None, tau: float = 0.1,
                         h: float = 0.15,
                         s_max: float | None = None, a: float | None = None,
                         z_lo: float = 0.0, z_hi: float = math.pi,
                         delta_s: float = DEFAULTS.delta_s,
                         delta_theta: float = DEFAULTS.delta_theta,
                         epsilon=DEFAULTS.epsilon_wing) -> DesingSurface:
    """Dislocated surface Sigma[T, phi, tau]: mapped core patches plus four
    wings bent by phi about their pivots."""
    from .scherk import calibrate_wing_constant

    th = tetrad_angles(T)["theta"]
    phi = np.zeros(4) if phi is None else np.asarray(phi, dtype=float)
    if a is None:
        a = calibrate_wing_constant(th, th, epsilon)
    surf = ScherkSurface(th, a, epsilon)
    if s_max is None:
        s_max = 5.0 * delta_s / tau
    patches = []
    for p in scherk_core_patches(surf, a + 1.0, h, z_lo=z_lo, z_hi=z_hi):
        Xm = apply_tetrad_map(p.X, T, delta_theta)
        patches.append(PatchGrid("d" + p.name, p.u, p.v, Xm, p.valid,
                                 orient=np.asarray(p.orient).copy(),
                                 owned=p.owned, sfield=p.sfield,
                                 mirror_v0=p.mirror_v0, mirror_v1=p.mirror_v1,
                                 meta=dict(p.meta, mapped=True, regions=0)))
    for i in range(4):
        patches.append(build_wing_patch(T, surf, i, tau, h, s_max,
                                        phi_i=float(phi[i]),
                                        z_lo=z_lo, z_hi=z_hi,
                                        delta_s=delta_s,
                                        delta_theta=delta_theta))
    return DesingSurface(T, surf, tau, patches, tuple(phi), pivots(T, a))


# ---------------------------------------------------------------------------
# straightening: re-solve the tetrad so that the surface with bendings
# phi - phi' passes through the boundary circles of Sigma[T, phi, tau]


def _boundary_offsets(beta_new, T: Tetrad, phi, phi_prime, tau, a,
                      boundary, delta_s):
    """Normal offsets f_1..f_4 of the candidate surface at the boundary
    circles of the reference surface (xy-plane reduction).

    boundary[i] = (p_hat, t_hat, n_hat): point, unit tangent and unit normal
    of the reference asymptotic reaper at s* = 5 delta_s / tau.
    """
    T2 = Tetrad(tuple(beta_new))
    s_star = 5.0 * delta_s / tau
    out = np.empty(4)
    for i in range(4):
        p_hat, t_hat, n_hat = boundary[i]

        def along(s):
            A, _ = wing_reaper_frame(T2, a, i, phi[i] - phi_prime[i], tau,
                                     s, 0.0)
            return A[:2]

        # intersect the normal line with the candidate reaper: solve
        # (A'(s) - p_hat) . t_hat = 0 by 1d Newton (the curves are graphs
        # over the tangent line near s*)
        s = s_star
        for _ in range(60):
            q = along(s)
            g = float((q - p_hat) @ t_hat)
            hfd = 1e-6 * (1.0 + s_star)
            dg = float((along(s + hfd) - along(s - hfd)) @ t_hat) / (2 * hfd)
            step = g / dg
            s -= step
            if abs(step) <= 1e-12 * (1.0 + s_star):
                break
        else:
            raise NoConvergence("straightening: foot-point search stalled")
        out[i] = float((along(s) - p_hat) @ n_hat)
    return out


def straighten(T: Tetrad, phi, tau: float, phi_prime,
               a: float | None = None,
               delta_s: float = DEFAULTS.delta_s, tol: float = 1e-9,
               maxiter: int = 40):
    """Tetrad T' whose surface with bendings phi - phi' passes through the
    four boundary circles of the surface over T with bendings phi.

    Solves (f_1..f_4)(T') = 0, f_i the normal offset of the candidate
    asymptotic reaper at the reference boundary circle (s* = 5 delta_s/tau),
    by Newton with finite-difference Jacobian.  Returns (T', offsets) with
    |offsets| <= tol at the solution; beta'_i = beta_i + phi'_i + O(tau).
    """
    from .scherk import calibrate_wing_constant

    phi = np.asarray(phi, dtype=float)
    phi_prime = np.asarray(phi_prime, dtype=float)
    if a is None:
        th = tetrad_angles(T)["theta"]
        a = calibrate_wing_constant(th, th, DEFAULTS.epsilon_wing)
    s_star = 5.0 * delta_s / tau
    boundary = []
    for i in range(4):
        A0, _ = wing_reaper_frame(T, a, i, phi[i], tau,
                                  np.array([s_star - 1e-6, s_star,
                                            s_star + 1e-6]), 0.0)
        t_hat = (A0[2, :2] - A0[0, :2]) / 2e-6
        t_hat = t_hat / np.linalg.norm(t_hat)
        n_hat = np.array([-t_hat[1], t_hat[0]])
        boundary.append((A0[1, :2], t_hat, n_hat))

    beta = np.asarray(T.beta, dtype=float) + phi_prime
    for _ in range(maxiter):
        r = _boundary_offsets(beta, T, phi, phi_prime, tau, a,
                              boundary, delta_s)
        if np.max(np.abs(r)) <= tol:
            return Tetrad(tuple(beta)), r
        J = np.empty((4, 4))
        hfd = 1e-7
        for j in range(4):
            bp = beta.copy()
            bp[j] += hfd
            J[:, j] = (_boundary_offsets(bp, T, phi, phi_prime, tau, a,
                                         boundary, delta_s) - r) / hfd
        beta = beta - np.linalg.solve(J, r)
    raise NoConvergence("straightening Newton did not converge")
