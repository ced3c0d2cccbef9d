"""Discrete differential geometry on masked structured parametric patches.

A patch is a rectangular (u, v) grid carrying immersion samples X(u,v) in R^3
with a validity mask (the surface piece may occupy only part of the rectangle).
All derivatives are 2nd-order finite differences: central where possible,
one-sided 2nd-order at mask boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateMetric, ImmersionFailure


# ---------------------------------------------------------------------------
# masked finite differences


def _shift(arr, k, axis):
    """Shift arr by k along axis, filling vacated entries with nan."""
    out = np.full_like(arr, np.nan)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if k > 0:
        src[axis] = slice(0, arr.shape[axis] - k)
        dst[axis] = slice(k, None)
    elif k < 0:
        src[axis] = slice(-k, None)
        dst[axis] = slice(0, arr.shape[axis] + k)
    else:
        return arr.copy()
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _shift_mask(mask, k, axis):
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if k > 0:
        src[axis] = slice(0, mask.shape[axis] - k)
        dst[axis] = slice(k, None)
    elif k < 0:
        src[axis] = slice(-k, None)
        dst[axis] = slice(0, mask.shape[axis] + k)
    else:
        return mask.copy()
    out[tuple(dst)] = mask[tuple(src)]
    return out


def masked_d1(F, valid, h, axis):
    """First derivative along axis with mask-aware stencils.

    Returns (dF, ok) where ok marks points with a 2nd-order stencil.
    """
    F = np.asarray(F, dtype=float)
    vm = valid
    fp1, fm1 = _shift(F, -1, axis), _shift(F, 1, axis)
    fp2, fm2 = _shift(F, -2, axis), _shift(F, 2, axis)
    vp1, vm1 = _shift_mask(vm, -1, axis), _shift_mask(vm, 1, axis)
    vp2, vm2 = _shift_mask(vm, -2, axis), _shift_mask(vm, 2, axis)

    out = np.full_like(F, np.nan)
    ok = np.zeros(vm.shape, dtype=bool)

    cen = vm & vp1 & vm1
    fwd = vm & vp1 & vp2 & ~cen
    bwd = vm & vm1 & vm2 & ~cen & ~fwd

    np.copyto(out, (fp1 - fm1) / (2 * h), where=_bc(cen, F))
    np.copyto(out, (-3 * F + 4 * fp1 - fp2) / (2 * h), where=_bc(fwd, F))
    np.copyto(out, (3 * F - 4 * fm1 + fm2) / (2 * h), where=_bc(bwd, F))
    ok = cen | fwd | bwd
    return out, ok


def masked_d2(F, valid, h, axis):
    """Second derivative along axis (central, or one-sided 2nd order)."""
    F = np.asarray(F, dtype=float)
    vm = valid
    fp1, fm1 = _shift(F, -1, axis), _shift(F, 1, axis)
    fp2, fm2 = _shift(F, -2, axis), _shift(F, 2, axis)
    fp3, fm3 = _shift(F, -3, axis), _shift(F, 3, axis)
    vp1, vm1 = _shift_mask(vm, -1, axis), _shift_mask(vm, 1, axis)
    vp2, vm2 = _shift_mask(vm, -2, axis), _shift_mask(vm, 2, axis)
    vp3, vm3 = _shift_mask(vm, -3, axis), _shift_mask(vm, 3, axis)

    out = np.full_like(F, np.nan)
    cen = vm & vp1 & vm1
    fwd = vm & vp1 & vp2 & vp3 & ~cen
    bwd = vm & vm1 & vm2 & vm3 & ~cen & ~fwd

    np.copyto(out, (fp1 - 2 * F + fm1) / h**2, where=_bc(cen, F))
    np.copyto(out, (2 * F - 5 * fp1 + 4 * fp2 - fp3) / h**2, where=_bc(fwd, F))
    np.copyto(out, (2 * F - 5 * fm1 + 4 * fm2 - fm3) / h**2, where=_bc(bwd, F))
    return out, cen | fwd | bwd


def _bc(mask, F):
    """Broadcast a (nu,nv) mask against F's trailing dims."""
    if F.ndim == mask.ndim:
        return mask
    return mask[..., None]


# ---------------------------------------------------------------------------
# patches


@dataclass
class PatchGrid:
    """Masked structured immersion grid.

    orient flips the finite-difference normal so nu = orient * (Xu x Xv)/|.|
    agrees with the surface's global orientation. sfield carries the outward
    s-coordinate where meaningful (wings/rays; core entries are <= 0).
    mirror_v0/mirror_v1 mark the v-grid edges lying on z-symmetry planes.
    """

    name: str
    u: np.ndarray
    v: np.ndarray
    X: np.ndarray
    valid: np.ndarray
    orient: np.ndarray | float = 1.0
    owned: Optional[np.ndarray] = None
    sfield: Optional[np.ndarray] = None
    immersion: Optional[Callable] = None
    mirror_v0: bool = False
    mirror_v1: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.owned is None:
            self.owned = self.valid.copy()
        if np.isscalar(self.orient):
            self.orient = float(self.orient) * np.ones(self.valid.shape)
        if self.sfield is None:
            self.sfield = np.zeros(self.valid.shape)

    @property
    def du(self):
        return float(self.u[1] - self.u[0]) if len(self.u) > 1 else 1.0

    @property
    def dv(self):
        return float(self.v[1] - self.v[0]) if len(self.v) > 1 else 1.0

    def grids(self):
        return np.meshgrid(self.u, self.v, indexing="ij")


@dataclass
class PatchGeometry:
    patch: PatchGrid
    Xu: np.ndarray
    Xv: np.ndarray
    g: np.ndarray          # (nu,nv,2,2)
    ginv: np.ndarray
    detg: np.ndarray
    A: np.ndarray          # (nu,nv,2,2) second fundamental form w.r.t. nu
    nu: np.ndarray         # (nu,nv,3) oriented unit normal
    H: np.ndarray          # trace(g^-1 A)
    A2: np.ndarray         # |A|^2 = trace((g^-1 A)^2)
    ok: np.ndarray         # where all stencils existed


def fundamental_forms(patch: PatchGrid) -> PatchGeometry:
    """First/second fundamental forms, normal, and mean curvature by FD."""
    X, valid = patch.X, patch.valid
    hu, hv = patch.du, patch.dv
    Xu, oku = masked_d1(X, valid, hu, 0)
    Xv, okv = masked_d1(X, valid, hv, 1)
    Xuu, okuu = masked_d2(X, valid, hu, 0)
    Xvv, okvv = masked_d2(X, valid, hv, 1)
    # mixed derivative: d/dv of Xu restricted to where Xu exists
    Xuv, okuv = masked_d1(Xu, oku, hv, 1)

    ok = oku & okv & okuu & okvv & okuv

    E = np.einsum("ijk,ijk->ij", Xu, Xu)
    Fc = np.einsum("ijk,ijk->ij", Xu, Xv)
    Gc = np.einsum("ijk,ijk->ij", Xv, Xv)
    detg = E * Gc - Fc**2
    bad = ok & ~(detg > 1e-300)
    if np.any(bad):
        raise DegenerateMetric(f"patch {patch.name}: singular metric at {np.argwhere(bad)[0]}")

    cross = np.cross(Xu, Xv)
    nrm = np.linalg.norm(cross, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        nu_vec = cross / nrm[..., None]
    nu_vec = nu_vec * np.asarray(patch.orient)[..., None]

    L = np.einsum("ijk,ijk->ij", Xuu, nu_vec)
    M = np.einsum("ijk,ijk->ij", Xuv, nu_vec)
    N = np.einsum("ijk,ijk->ij", Xvv, nu_vec)

    g = np.stack([np.stack([E, Fc], axis=-1), np.stack([Fc, Gc], axis=-1)], axis=-2)
    A = np.stack([np.stack([L, M], axis=-1), np.stack([M, N], axis=-1)], axis=-2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ginv = np.empty_like(g)
        ginv[..., 0, 0] = Gc / detg
        ginv[..., 1, 1] = E / detg
        ginv[..., 0, 1] = -Fc / detg
        ginv[..., 1, 0] = -Fc / detg
        shape_op = np.einsum("ijab,ijbc->ijac", ginv, A)
    H = np.einsum("ijaa->ij", shape_op)
    A2 = np.einsum("ijab,ijba->ij", shape_op, shape_op)
    return PatchGeometry(patch, Xu, Xv, g, ginv, detg, A, nu_vec, H, A2, ok)


# ---------------------------------------------------------------------------
# fields and operators


def gradient_field(geom: PatchGeometry, vfield):
    """Ambient gradient of a scalar field v: g^{ij} d_j v X_i; returns (grad, ok)."""
    p = geom.patch
    vu, oku = masked_d1(vfield, p.valid, p.du, 0)
    vv, okv = masked_d1(vfield, p.valid, p.dv, 1)
    ok = geom.ok & oku & okv
    gu = geom.ginv[..., 0, 0] * vu + geom.ginv[..., 0, 1] * vv
    gv = geom.ginv[..., 1, 0] * vu + geom.ginv[..., 1, 1] * vv
    grad = gu[..., None] * geom.Xu + gv[..., None] * geom.Xv
    return grad, ok


def laplace_beltrami(geom: PatchGeometry, vfield):
    """Divergence-form Laplace–Beltrami by repeated masked differences."""
    p = geom.patch
    vu, oku = masked_d1(vfield, p.valid, p.du, 0)
    vv, okv = masked_d1(vfield, p.valid, p.dv, 1)
    ok1 = oku & okv & geom.ok
    sq = np.sqrt(np.where(geom.detg > 0, geom.detg, np.nan))
    P1 = sq * (geom.ginv[..., 0, 0] * vu + geom.ginv[..., 0, 1] * vv)
    P2 = sq * (geom.ginv[..., 1, 0] * vu + geom.ginv[..., 1, 1] * vv)
    d1, okd1 = masked_d1(P1, ok1, p.du, 0)
    d2, okd2 = masked_d1(P2, ok1, p.dv, 1)
    ok = ok1 & okd1 & okd2
    return (d1 + d2) / sq, ok


def apply_linearized_operator(geom: PatchGeometry, vfield, tau_bar: float):
    """L v = Laplace–Beltrami v + |A|^2 v + tau e_y . grad v on one patch."""
    lap, ok1 = laplace_beltrami(geom, vfield)
    grad, ok2 = gradient_field(geom, vfield)
    out = lap + geom.A2 * vfield + tau_bar * grad[..., 1]
    return out, ok1 & ok2


def perturb_by_graph(geom: PatchGeometry, vfield) -> PatchGrid:
    """The normal graph X + v nu as a new patch (same grid and masks)."""
    p = geom.patch
    shape_norm = np.abs(vfield) * np.sqrt(np.maximum(geom.A2, 0.0))
    if np.nanmax(np.where(geom.ok, shape_norm, 0.0)) >= 1.0:
        raise ImmersionFailure("|v A| >= 1 somewhere; graph is not an immersion")
    Xp = p.X + np.where(geom.ok[..., None], vfield[..., None] * geom.nu, 0.0)
    return PatchGrid(p.name + "+graph", p.u.copy(), p.v.copy(), Xp,
                     p.valid & geom.ok, orient=np.asarray(p.orient).copy(),
                     owned=p.owned & geom.ok, sfield=p.sfield.copy(),
                     mirror_v0=p.mirror_v0, mirror_v1=p.mirror_v1,
                     meta=dict(p.meta))


# ---------------------------------------------------------------------------
# norms, residuals, quadrature


def weighted_sup(fields, sfields, masks, gamma):
    """sup over patches of e^{gamma s} |field| (the weighted decay norm)."""
    best = 0.0
    for f, s, m in zip(fields, sfields, masks):
        if not np.any(m):
            continue
        w = np.exp(gamma * np.where(s > 0, s, 0.0))
        best = max(best, float(np.nanmax(np.where(m, w * np.abs(f), 0.0))))
    return best


@dataclass
class ResidualReport:
    sup: float
    weighted: float
    per_patch: dict
    fields: list


def residual_field(geoms, tau_bar: float, gamma: float) -> ResidualReport:
    """R = H - tau e_y . nu per patch with weighted sup norms."""
    fields, per_patch = [], {}
    sup = wsup = 0.0
    for geom in geoms:
        R = geom.H - tau_bar * geom.nu[..., 1]
        m = geom.ok & geom.patch.owned
        fields.append(R)
        if np.any(m):
            s = geom.patch.sfield
            w = np.exp(gamma * np.where(s > 0, s, 0.0))
            psup = float(np.nanmax(np.where(m, np.abs(R), 0.0)))
            pw = float(np.nanmax(np.where(m, w * np.abs(R), 0.0)))
        else:
            psup = pw = 0.0
        per_patch[geom.patch.name] = {"sup": psup, "weighted": pw}
        sup, wsup = max(sup, psup), max(wsup, pw)
    return ResidualReport(sup, wsup, per_patch, fields)


def patch_area_weights(geom: PatchGeometry):
    """Quadrature weight per owned grid node: sqrt(det g) du dv (trapezoid-like)."""
    p = geom.patch
    w = np.sqrt(np.where(geom.detg > 0, geom.detg, 0.0)) * p.du * p.dv
    return np.where(geom.ok & p.owned, w, 0.0)


def integrate_vector(geoms, fields):
    """Integrate a per-patch scalar field times the normal over owned regions."""
    total = np.zeros(3)
    for geom, f in zip(geoms, fields):
        w = patch_area_weights(geom)
        total += np.einsum("ij,ijk->k", np.where(np.isfinite(f), f, 0.0) * w,
                           np.where(np.isfinite(geom.nu), geom.nu, 0.0))
    return total


def boundary_conormal_integral(curve_points, conormals):
    """∮ n̄ dl over a polyline with unit conormal samples (trapezoid rule)."""
    P = np.asarray(curve_points, dtype=float)
    n = np.asarray(conormals, dtype=float)
    seg = np.linalg.norm(np.diff(P, axis=0), axis=-1)
    mid = 0.5 * (n[1:] + n[:-1])
    return np.einsum("i,ij->j", seg, mid)


def surface_normal_integral(patches, geoms, fields):
    """int f nu dmu over a patch roster.

    Uses the smooth quadrature partition of unity carried by the patches
    (meta["quad_weight"], second order across chart seams); patches without
    weights fall back to their owned region.
    """
    total = np.zeros(3)
    for p, g, f in zip(patches, geoms, fields):
        qw = p.meta.get("quad_weight")
        if qw is None:
            qw = p.owned.astype(float)
        m = (qw > 0) & g.ok & np.isfinite(f)
        if not np.any(m):
            continue
        sq = np.sqrt(np.where(g.detg > 0, g.detg, 0.0))
        w = qw * sq * p.du * p.dv
        for c in range(3):
            total[c] += float(np.sum(np.where(m, f * g.nu[..., c] * w, 0.0)))
    return total


def wing_end_boundaries(patches, geoms):
    """Boundary polylines (points, outward conormals) at the wing truncation.

    One polyline per wing chart: the owned grid column at the largest s, with
    the conormal the outward (increasing-s) surface tangent orthogonal to the
    curve.
    """
    out = []
    for p, g in zip(patches, geoms):
        if p.meta.get("kind") not in ("wing", "dwing"):
            continue
        rows = np.nonzero(p.owned.any(axis=1))[0]
        iend = int(rows[-1])
        cols = np.nonzero(p.owned[iend])[0]
        P = p.X[iend, cols]
        Xs = (p.X[iend + 1, cols] - p.X[iend - 1, cols]) / (2.0 * p.du)
        That = np.gradient(P, axis=0)
        That = That / np.linalg.norm(That, axis=-1, keepdims=True)
        n = Xs - np.einsum("ij,ij->i", Xs, That)[:, None] * That
        n = n / np.linalg.norm(n, axis=-1, keepdims=True)
        out.append((P, n))
    return out


def balancing_integral(patches, geoms=None, boundaries=None):
    """Both sides of the first-variation identity on a patch roster.

    Returns a dict with "area" = int H nu dmu, "boundary" = sum of the
    conormal line integrals, and "perimeter".  Boundaries default to the
    wing-truncation curves of the roster; pass explicit (points, conormals)
    polylines for other pieces.
    """
    if geoms is None:
        geoms = [fundamental_forms(p) for p in patches]
    area = surface_normal_integral(patches, geoms, [g.H for g in geoms])
    if boundaries is None:
        boundaries = wing_end_boundaries(patches, geoms)
    bnd = np.zeros(3)
    perim = 0.0
    for P, n in boundaries:
        bnd += boundary_conormal_integral(P, n)
        perim += float(np.sum(np.linalg.norm(np.diff(np.asarray(P, float),
                                                     axis=0), axis=-1)))
    return {"area": area, "boundary": bnd, "perimeter": perim}
