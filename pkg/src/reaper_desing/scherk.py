"""Singly periodic Scherk surfaces: implicit form, wing graphs, core sampling.

The surface of angle theta is the zero set of

    F(x, y, z) = cos^2(theta) cosh(x/cos theta)
               - sin^2(theta) cosh(y/sin theta) - cos(z),

periodic in z with period 2 pi, with four asymptotically planar wings along
the directions +-e[theta], +-e[pi - theta].  Outside a core cylinder of
radius `a` each wing is a normal-direction graph over its asymptotic
half-plane with exponentially decaying graph function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from .discgeo import PatchGrid
from .errors import (CalibrationFailed, ImmersionFailure, MultiRoot, NoRoot,
                     TopologyError)
from .util import DEFAULTS, e_perp, e_vec, psi_ab

_CLIP = 700.0  # cosh/sinh argument clip; sign information is all that survives


def _cosh(x):
    return np.cosh(np.clip(x, -_CLIP, _CLIP))


def _sinh(x):
    return np.sinh(np.clip(x, -_CLIP, _CLIP))


# reflections mapping wing 1 onto wings 1..4
WING_REFLECTIONS = {
    1: np.diag([1.0, 1.0, 1.0]),
    2: np.diag([-1.0, 1.0, 1.0]),
    3: np.diag([-1.0, -1.0, 1.0]),
    4: np.diag([1.0, -1.0, 1.0]),
}


def wing_angle(theta: float, wing: int) -> float:
    """Direction angle of wing i in the xy-plane."""
    return {1: theta, 2: math.pi - theta, 3: math.pi + theta, 4: -theta}[wing]


def asymptote_offset(theta: float) -> float:
    """Signed offset b_theta = sin(2 theta) log(cot theta) of the asymptotic
    half-plane of wing 1 from the line R e[theta], measured along e'[theta]."""
    return math.sin(2.0 * theta) * math.log(1.0 / math.tan(theta))


@dataclass(frozen=True)
class ScherkSurface:
    theta: float
    a: float = 9.0
    epsilon_wing: float = DEFAULTS.epsilon_wing

    def __post_init__(self):
        if not 0.0 < self.theta < math.pi / 2:
            raise ValueError("theta must lie in (0, pi/2)")

    # -- implicit form ------------------------------------------------------

    def implicit_value(self, p):
        p = np.asarray(p, dtype=float)
        ct, st = math.cos(self.theta), math.sin(self.theta)
        return (ct**2 * _cosh(p[..., 0] / ct) - st**2 * _cosh(p[..., 1] / st)
                - np.cos(p[..., 2]))

    def implicit_gradient(self, p):
        p = np.asarray(p, dtype=float)
        ct, st = math.cos(self.theta), math.sin(self.theta)
        return np.stack([ct * _sinh(p[..., 0] / ct),
                         -st * _sinh(p[..., 1] / st),
                         np.sin(p[..., 2])], axis=-1)

    def implicit_hessian(self, p):
        p = np.asarray(p, dtype=float)
        ct, st = math.cos(self.theta), math.sin(self.theta)
        h = np.zeros(p.shape[:-1] + (3, 3))
        h[..., 0, 0] = _cosh(p[..., 0] / ct)
        h[..., 1, 1] = -_cosh(p[..., 1] / st)
        h[..., 2, 2] = np.cos(p[..., 2])
        return h

    @property
    def b_theta(self):
        return asymptote_offset(self.theta)

    # -- exact pointwise geometry (oracle for the FD pipeline) --------------

    def exact_geometry(self, p):
        """(nu, H, |A|^2) at on-surface points from the implicit form."""
        g = self.implicit_gradient(p)
        ng = np.linalg.norm(g, axis=-1)
        nu = g / ng[..., None]
        hess = self.implicit_hessian(p)
        tr = np.einsum("...aa->...", hess)
        nHn = np.einsum("...a,...ab,...b->...", nu, hess, nu)
        H = (tr - nHn) / ng
        # shape operator of the level set: P Hess P / |grad F| on the tangent plane
        P = np.eye(3) - nu[..., :, None] * nu[..., None, :]
        W = np.einsum("...ab,...bc,...cd->...ad", P, hess, P) / ng[..., None, None]
        A2 = np.einsum("...ab,...ba->...", W, W)
        return nu, H, A2

    # -- wing frames and graph functions ------------------------------------

    def wing_frame(self, s, z, wing: int = 1):
        """Base points A_i(s, z) on the asymptotic half-plane and the unit
        offset direction; s measures distance beyond the split radius a."""
        s = np.asarray(s, dtype=float)
        z = np.asarray(z, dtype=float)
        s, z = np.broadcast_arrays(s, z)
        e = e_vec(self.theta)
        ep = e_perp(self.theta)
        base = np.empty(s.shape + (3,))
        base[..., 0] = (self.a + s) * e[0] + self.b_theta * ep[0]
        base[..., 1] = (self.a + s) * e[1] + self.b_theta * ep[1]
        base[..., 2] = z
        d = np.array([ep[0], ep[1], 0.0])
        R = WING_REFLECTIONS[wing]
        return base @ R.T, R @ d

    def wing_graph(self, s, z, wing: int = 1, return_ok: bool = False):
        """Vectorized graph function f(s, z) of a wing by damped Newton.

        Along the offset direction through the frame point, F is strictly
        monotone on the wing, so Newton from f = 0 finds the unique root.
        """
        base, d = self.wing_frame(s, z, wing)
        f = np.zeros(base.shape[:-1])
        ok = np.ones(f.shape, dtype=bool)
        for _ in range(60):
            p = base + f[..., None] * d
            val = self.implicit_value(p)
            der = np.einsum("...a,a->...", self.implicit_gradient(p), d)
            ok &= np.abs(der) > 1e-300
            step = np.where(ok, val / np.where(ok, der, 1.0), 0.0)
            step = np.clip(step, -0.5, 0.5)
            f = f - step
            if np.all(np.abs(step) <= 1e-14 * (1.0 + np.abs(f))):
                break
        p = base + f[..., None] * d
        resid = np.abs(self.implicit_value(p))
        scale = 1.0 + np.abs(np.einsum("...a,a->...",
                                       self.implicit_gradient(p), d))
        ok &= resid <= 1e-9 * scale
        if return_ok:
            return f, ok
        if not np.all(ok):
            raise NoRoot(f"wing graph Newton failed at {np.argwhere(~ok)[0]}")
        return f

    def wing_point(self, s, z, wing: int = 1):
        base, d = self.wing_frame(s, z, wing)
        f = self.wing_graph(s, z, wing)
        return base + f[..., None] * d


def wing_graph_function(theta, s, z, a, epsilon=DEFAULTS.epsilon_wing, wing=1):
    """Scalar wing graph value by bracketed root finding (robust reference).

    Searches |f| <= 4 epsilon e^{-s} + |b_theta| + 0.1; raises NoRoot if the
    bracket contains no sign change and MultiRoot if it contains several.
    """
    surf = ScherkSurface(theta, a, epsilon)
    base, d = surf.wing_frame(float(s), float(z), wing)

    def g(f):
        return float(surf.implicit_value(base + f * d))

    B = 4.0 * epsilon * math.exp(-float(s)) + abs(surf.b_theta) + 0.1
    fs = np.linspace(-B, B, 129)
    vals = np.array([g(f) for f in fs])
    sgn = np.sign(vals)
    changes = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    if len(changes) == 0:
        raise NoRoot(f"no wing graph root within |f| <= {B:.3g}")
    if len(changes) > 1:
        raise MultiRoot(f"{len(changes)} roots within |f| <= {B:.3g}")
    i = changes[0]
    return brentq(g, fs[i], fs[i + 1], xtol=1e-14)


@lru_cache(maxsize=32)
def calibrate_wing_constant(theta_lo, theta_hi, epsilon=DEFAULTS.epsilon_wing,
                            a_max=64.0, a_step=0.25):
    """Smallest split radius a (on a grid) so that every theta in the range
    has all four wings |f| <= epsilon e^{-s} for s >= 0 beyond radius a.

    The wing graph depends on the distance r = a + s along the wing only,
    so the condition is sup_{r >= a} max_z |f(r, z)| e^{r} <= epsilon e^{a}.
    The sup is checked on the window where epsilon e^{-s} stays above the
    floating-point noise floor of the root (the envelope decays beyond it).
    """
    s_cap = math.log(epsilon) + 27.6  # below this, eps e^{-s} ~ 1e-12
    thetas = np.linspace(theta_lo, theta_hi, 9)
    r_grid = np.arange(1.0, a_max + s_cap + 0.5, 0.25)
    z_grid = np.linspace(0.0, math.pi, 17)
    a_grid = np.arange(1.0, a_max + a_step / 2, a_step)

    best = None
    for th in thetas:
        surf = ScherkSurface(float(th), 0.0, epsilon)
        R, Z = np.meshgrid(r_grid, z_grid, indexing="ij")
        f, ok = surf.wing_graph(R, Z, 1, return_ok=True)
        profile = np.max(np.where(ok, np.abs(f), np.inf) * np.exp(R), axis=1)
        fits = None
        for a in a_grid:
            i = int(np.searchsorted(r_grid, a))
            j = int(np.searchsorted(r_grid, a + s_cap, side="right"))
            if i < len(profile) and np.max(profile[i:j]) <= epsilon * math.exp(a):
                fits = float(a)
                break
        if fits is None:
            raise CalibrationFailed(
                f"no split radius <= {a_max} for theta={th:.4f}")
        best = fits if best is None else max(best, fits)
    return best


# ---------------------------------------------------------------------------
# structured graph patches over the coordinate planes


def _dominant_masks(surf, pts):
    g = surf.implicit_gradient(pts)
    ng = np.linalg.norm(g, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.abs(g) / ng[..., None]
    return ratios, g


DOM_OWN = 0.35      # a patch owns points where its gradient component dominates
DOM_VALID = 0.18    # ... but samples a wider margin so owned stencils stay central
OWN_MARGIN = 0.8    # physical erosion of ownership, so the region is h-independent
S_SPLIT = 0.5       # wing charts take over the solve region beyond s = S_SPLIT

QUAD_CUT = (0.22, 0.32)   # hard support cutoff (in dominance ratio) of the
QUAD_POW = 8              # quadrature partition of unity; softmax-like power
QUAD_SBLEND = 0.3         # half-width in s of the core/wing quadrature handoff


def _quad_bumps(ratios):
    """Smooth per-axis quadrature weights from the dominance ratios.

    The ratios are functions of physical position only (components of the
    normalized implicit gradient), so the same point seen from two charts gets
    the same weights; normalizing by the sum makes a partition of unity whose
    seams are smooth blends instead of argmax jumps.  The hard cutoff keeps
    every weight supported well inside the chart's validity margin."""
    t = np.where(np.isfinite(ratios), ratios, 0.0)
    return psi_ab(QUAD_CUT[0], QUAD_CUT[1], t) * t**QUAD_POW


def _quad_weight_core(ratios, axis, r, surf, zvals=None,
                      z_lo=None, z_hi=None):
    bumps = _quad_bumps(ratios)
    tot = np.sum(bumps, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        qw = np.where(tot > 0, bumps[..., axis] / np.where(tot > 0, tot, 1.0),
                      0.0)
    s_of_r = r - surf.a
    qw = qw * psi_ab(S_SPLIT + QUAD_SBLEND, S_SPLIT - QUAD_SBLEND, s_of_r)
    if zvals is not None:
        zface = np.where(
            (zvals > z_lo + 1e-9) & (zvals < z_hi - 1e-9), 1.0,
            np.where((np.abs(zvals - z_lo) <= 1e-9)
                     | (np.abs(zvals - z_hi) <= 1e-9), 0.5, 0.0))
        qw = qw * zface
    return qw


def _quad_weight_wing(S, Z, s_hi, z_lo, z_hi):
    qw = psi_ab(S_SPLIT - QUAD_SBLEND, S_SPLIT + QUAD_SBLEND, S)
    zface = np.where((Z > z_lo + 1e-9) & (Z < z_hi - 1e-9), 1.0,
                     np.where((np.abs(Z - z_lo) <= 1e-9)
                              | (np.abs(Z - z_hi) <= 1e-9), 0.5, 0.0))
    sface = np.where(S > s_hi + 1e-9, 0.0,
                     np.where(np.abs(S - s_hi) <= 1e-9, 0.5, 1.0))
    return qw * zface * sface


def _partition_mask(ratios, axis, P, surf, valid):
    """Argmax-dominance solve partition: each surface point is discretized on
    exactly one chart (ties on the diagonals keep both, a one-cell seam)."""
    finite = np.where(np.isfinite(ratios), ratios, -np.inf)
    part = valid & (ratios[..., axis] >= np.max(finite, axis=-1) - 1e-9)
    part &= np.hypot(P[..., 0], P[..., 1]) <= surf.a + S_SPLIT + 1e-12
    return part


def scherk_core_patches(surf: ScherkSurface, rmax: float, h: float,
                        z_lo: float = 0.0, z_hi: float = math.pi,
                        zpad: int = 3):
    """Masked Monge patches covering the core cylinder r <= rmax, z in
    [z_lo, z_hi] (the z-grids extend zpad cells beyond for stencils).

    Five patches: graph over (x, y) on the arccos branch z in [0, pi], and
    graphs over (y, z) / (x, z) for the four x/y-monotone sheets.  Each point
    of the surface is covered by the patch of its dominant gradient component
    (max component >= 1/sqrt(3) > DOM_OWN); validity extends to DOM_VALID and
    ownership is eroded so that owned points use central stencils only.
    """
    th = surf.theta
    ct, st = math.cos(th), math.sin(th)
    L = rmax + 3 * h
    n = max(3, int(round(2 * L / h)) + 1)
    xy = np.linspace(-L, L, n)
    nz = max(3, int(round((z_hi - z_lo) / h)))
    hz = (z_hi - z_lo) / nz
    zg = z_lo + hz * np.arange(-zpad, nz + zpad + 1)
    patches = []

    # graph z = arccos(G(x, y)) on the branch [0, pi]
    X, Y = np.meshgrid(xy, xy, indexing="ij")
    G = ct**2 * _cosh(X / ct) - st**2 * _cosh(Y / st)
    Z = np.arccos(np.clip(G, -1.0, 1.0))
    P = np.stack([X, Y, Z], axis=-1)
    ratios, g = _dominant_masks(surf, P)
    valid = (np.abs(G) <= 1.0) & (ratios[..., 2] >= DOM_VALID)
    own = (ratios[..., 2] >= DOM_OWN) & (X**2 + Y**2 <= rmax**2)
    part = _partition_mask(ratios, 2, P, surf, valid)
    qw = _quad_weight_core(ratios, 2, np.hypot(X, Y), surf)
    if z_lo > 0.0 or z_hi < math.pi:
        own &= (Z >= z_lo) & (Z <= z_hi)
        part &= (Z >= z_lo - 1e-12) & (Z <= z_hi + 1e-12)
        qw = qw * ((Z >= z_lo) & (Z <= z_hi))
    if np.any(own):
        patches.append(_finish_patch("core_z", xy, xy, P, valid, own, g, surf,
                                     part=part, quad=qw))

    # graphs x = +- cos(theta) arccosh(W), W = (cos z + sin^2 cosh(y/sin)) / cos^2
    Yg, Zg = np.meshgrid(xy, zg, indexing="ij")
    W = (np.cos(Zg) + st**2 * _cosh(Yg / st)) / ct**2
    okW = W >= 1.0
    Xmag = ct * np.arccosh(np.maximum(W, 1.0))
    for sign, nm in ((1.0, "core_x+"), (-1.0, "core_x-")):
        P = np.stack([sign * Xmag, Yg, Zg], axis=-1)
        ratios, g = _dominant_masks(surf, P)
        valid = okW & (ratios[..., 0] >= DOM_VALID)
        own = okW & (ratios[..., 0] >= DOM_OWN)
        own &= P[..., 0]**2 + P[..., 1]**2 <= rmax**2
        if np.any(own):
            r = np.hypot(P[..., 0], P[..., 1])
            patches.append(_finish_patch(nm, xy, zg, P, valid, own, g, surf,
                                         z_axis=1, z_lo=z_lo, z_hi=z_hi,
                                         part=_partition_mask(ratios, 0, P,
                                                              surf, valid),
                                         quad=_quad_weight_core(
                                             ratios, 0, r, surf, zvals=Zg,
                                             z_lo=z_lo, z_hi=z_hi)))

    # graphs y = +- sin(theta) arccosh(V), V = (cos^2 cosh(x/cos) - cos z) / sin^2
    Xg, Zg = np.meshgrid(xy, zg, indexing="ij")
    V = (ct**2 * _cosh(Xg / ct) - np.cos(Zg)) / st**2
    okV = V >= 1.0
    Ymag = st * np.arccosh(np.maximum(V, 1.0))
    for sign, nm in ((1.0, "core_y+"), (-1.0, "core_y-")):
        P = np.stack([Xg, sign * Ymag, Zg], axis=-1)
        ratios, g = _dominant_masks(surf, P)
        valid = okV & (ratios[..., 1] >= DOM_VALID)
        own = okV & (ratios[..., 1] >= DOM_OWN)
        own &= P[..., 0]**2 + P[..., 1]**2 <= rmax**2
        if np.any(own):
            r = np.hypot(P[..., 0], P[..., 1])
            patches.append(_finish_patch(nm, xy, zg, P, valid, own, g, surf,
                                         z_axis=1, z_lo=z_lo, z_hi=z_hi,
                                         part=_partition_mask(ratios, 1, P,
                                                              surf, valid),
                                         quad=_quad_weight_core(
                                             ratios, 1, r, surf, zvals=Zg,
                                             z_lo=z_lo, z_hi=z_hi)))
    return patches


def _finish_patch(name, u, v, P, valid, own, grad, surf, z_axis=None,
                  z_lo=None, z_hi=None, part=None, quad=None):
    from scipy.ndimage import binary_erosion

    # orient the FD normal along +grad F
    Xu = np.gradient(P, axis=0)
    Xv = np.gradient(P, axis=1)
    cr = np.cross(Xu, Xv)
    orient = np.where(np.einsum("ijk,ijk->ij", cr, grad) >= 0, 1.0, -1.0)
    h = float(u[1] - u[0])
    it = max(2, int(math.ceil(OWN_MARGIN / h - 1e-9)))
    owned = own & binary_erosion(valid, structure=np.ones((3, 3), dtype=bool),
                                 iterations=it)
    mirror0 = mirror1 = False
    if z_axis == 1:
        zvals = P[..., 2]
        owned &= (zvals >= z_lo - 1e-12) & (zvals <= z_hi + 1e-12)
        mirror0 = abs(z_lo - 0.0) < 1e-12 or abs(abs(z_lo) - math.pi) < 1e-12
        mirror1 = abs(z_hi - math.pi) < 1e-12 or abs(z_hi - 2 * math.pi) < 1e-12
    # s-coordinate: distance beyond the split radius along the wing direction
    r = np.hypot(P[..., 0], P[..., 1])
    sfield = np.maximum(r - surf.a, 0.0)
    meta = {"kind": "core", "theta": surf.theta}
    if part is not None:
        meta["partition"] = part
    if quad is not None:
        meta["quad_weight"] = quad
    return PatchGrid(name, np.asarray(u, float), np.asarray(v, float), P,
                     valid, orient=orient, owned=owned, sfield=sfield,
                     mirror_v0=mirror0, mirror_v1=mirror1, meta=meta)


def scherk_wing_patch(surf: ScherkSurface, wing: int, s_hi: float, hs: float,
                      z_lo: float = 0.0, z_hi: float = math.pi,
                      zpad: int = 3, s_lo: float = 0.0, spad: int = 3):
    """Structured wing chart (s, z) -> A_i + f e'_i, owning s in [s_lo, s_hi].

    The grid extends spad/zpad cells beyond the owned rectangle so that all
    owned points use central stencils.
    """
    ns = max(3, int(round((s_hi - s_lo) / hs)))
    hs_eff = (s_hi - s_lo) / ns
    s = s_lo + hs_eff * np.arange(-spad, ns + spad + 1)
    nz = max(3, int(round((z_hi - z_lo) / hs)))
    hz = (z_hi - z_lo) / nz
    z = z_lo + hz * np.arange(-zpad, nz + zpad + 1)
    S, Z = np.meshgrid(s, z, indexing="ij")
    f, ok = surf.wing_graph(S, Z, wing, return_ok=True)
    base, d = surf.wing_frame(S, Z, wing)
    P = base + np.where(ok, f, 0.0)[..., None] * d
    grad = surf.implicit_gradient(P)
    Xu = np.gradient(P, axis=0)
    Xv = np.gradient(P, axis=1)
    orient = np.where(np.einsum("ijk,ijk->ij",
                                np.cross(Xu, Xv), grad) >= 0, 1.0, -1.0)
    owned = (ok & (Z >= z_lo - 1e-12) & (Z <= z_hi + 1e-12)
             & (S >= s_lo - 1e-12) & (S <= s_hi + 1e-12))
    mirror0 = abs(z_lo) < 1e-12 or abs(abs(z_lo) - math.pi) < 1e-12
    mirror1 = abs(z_hi - math.pi) < 1e-12 or abs(z_hi - 2 * math.pi) < 1e-12
    part = owned & (S >= S_SPLIT - 1e-12)
    qw = _quad_weight_wing(S, Z, s_hi, z_lo, z_hi)
    return PatchGrid(f"wing{wing}", s, z, P, ok, orient=orient, owned=owned,
                     sfield=S.copy(), mirror_v0=mirror0, mirror_v1=mirror1,
                     meta={"kind": "wing", "wing": wing, "theta": surf.theta,
                           "partition": part, "quad_weight": qw})


# ---------------------------------------------------------------------------
# triangulated core (topology checks and export)


@dataclass
class CoreMesh:
    vertices: np.ndarray
    faces: np.ndarray
    boundary_loops: list
    h: float
    patches: list = field(default_factory=list)


def _boundary_loops(faces):
    edges = {}
    for tri in faces:
        for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(e), max(e))
            edges[key] = edges.get(key, 0) + 1
    return [e for e, cnt in edges.items() if cnt == 1]


def sample_core(theta: float, resolution: int = 96, a: float | None = None,
                z_lo: float = 0.0, z_hi: float = 2 * math.pi,
                epsilon=DEFAULTS.epsilon_wing) -> CoreMesh:
    """Triangulated core piece {F = 0, r <= a + 1, z in [z_lo, z_hi]}.

    Vertices are Newton-projected onto the surface to |F| <= 1e-8; the side
    boundary (excluding the z-plane cuts) must split into exactly four wing
    cut loops, and the sampling must respect the rotation (x,y) -> (-x,-y).
    """
    if a is None:
        a = calibrate_wing_constant(theta, theta, epsilon)
    surf = ScherkSurface(theta, a, epsilon)
    L = a + 1.0
    n = int(resolution) | 1  # odd: grid symmetric through the axis
    xs = np.linspace(-L, L, n)
    h = xs[1] - xs[0]
    nz = max(4, int(round((z_hi - z_lo) / h)))
    zs = np.linspace(z_lo, z_hi, nz + 1)
    X, Y, Z = np.meshgrid(xs, xs, zs, indexing="ij")
    vol = surf.implicit_value(np.stack([X, Y, Z], axis=-1))
    verts, faces, _, _ = marching_cubes(vol, level=0.0,
                                        spacing=(h, h, zs[1] - zs[0]))
    verts = verts + np.array([xs[0], xs[0], zs[0]])

    # Newton projection onto the zero set
    for _ in range(25):
        val = surf.implicit_value(verts)
        if np.max(np.abs(val)) <= 1e-10:
            break
        g = surf.implicit_gradient(verts)
        n2 = np.einsum("ij,ij->i", g, g)
        verts = verts - (val / n2)[:, None] * g
    if np.max(np.abs(surf.implicit_value(verts))) > 1e-8:
        raise ImmersionFailure("Newton projection of core mesh did not converge")

    # keep the cylinder r <= L
    r = np.hypot(verts[:, 0], verts[:, 1])
    keep = r <= L + 1e-9
    idx = -np.ones(len(verts), dtype=int)
    idx[keep] = np.arange(int(keep.sum()))
    fkeep = keep[faces].all(axis=1)
    faces = idx[faces[fkeep]]
    verts = verts[keep]

    # side boundary loops (wing cuts): drop edges on the z cut planes
    loops_edges = _boundary_loops(faces)
    zmid = verts[:, 2]
    side = [e for e in loops_edges
            if min(zmid[e[0]], zmid[e[1]]) > z_lo + 1.5 * (zs[1] - zs[0])
            and max(zmid[e[0]], zmid[e[1]]) < z_hi - 1.5 * (zs[1] - zs[0])]
    loops = _connected_components(side)
    if len(loops) != 4:
        raise TopologyError(f"expected 4 wing cut loops, found {len(loops)}")

    # rotation symmetry (x, y, z) -> (-x, -y, z) of the sampling
    tree = cKDTree(verts)
    refl = verts * np.array([-1.0, -1.0, 1.0])
    dist, _ = tree.query(refl)
    if np.max(dist) > 2.0 * h:
        raise TopologyError("core sampling lost the half-turn symmetry")

    return CoreMesh(verts, faces, loops, float(h))


def _connected_components(edges):
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            parent[x] = parent.get(parent[x], parent[x])
            x = parent[x]
        return x

    for aa, bb in edges:
        parent.setdefault(aa, aa)
        parent.setdefault(bb, bb)
        ra, rb = find(aa), find(bb)
        if ra != rb:
            parent[ra] = rb
    comps = {}
    for aa, bb in edges:
        comps.setdefault(find(aa), []).append((aa, bb))
    return list(comps.values())
