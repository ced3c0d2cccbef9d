"""Overset coupling of masked parametric patches into one sparse operator.

A surface covered by several masked structured patches (graphs over coordinate
planes, wing charts) is discretized as a single linear system whose unknowns
are all valid grid nodes of all patches.  Each node carries exactly one row:

* interior nodes owned by their patch discretize the divergence-form operator
  Delta_g + potential (+ tau e_y . grad) with a 9-point stencil;
* pad nodes across a z-symmetry plane are tied to their mirror image (the
  even symmetry class in z);
* pad nodes beyond a wing truncation carry even (Neumann) or odd (Dirichlet)
  reflection constraints;
* remaining fringe nodes are interpolated bilinearly from a donor patch,
  located geometrically through a KD-tree plus local cell inversion;
* unresolvable orphans are pinned to zero (and counted in the diagnostics).

The same system serves direct solves (sparse LU) and the generalized
eigenproblem (Delta_g + |A|^2) u = lambda (|A|^2/2 + eps) u, which is the
conformal reformulation of the near-kernel eigenproblem of the linearized
translator operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.ndimage import binary_erosion
from scipy.sparse.linalg import eigs, splu
from scipy.spatial import cKDTree

from .discgeo import PatchGeometry, _shift, fundamental_forms
from .errors import SingularBorderedSystem

KIND_NONE, KIND_PDE, KIND_MIRROR, KIND_REFLECT, KIND_INTERP, KIND_ZERO, \
    KIND_DIRICHLET = range(7)

WING_KINDS = {"wing", "dwing"}


def _shift_int(I, di, dj):
    """Shift an int index array, filling vacated entries with -1."""
    out = np.full_like(I, -1)
    su = slice(max(di, 0), I.shape[0] + min(di, 0))
    du = slice(max(-di, 0), I.shape[0] + min(-di, 0))
    sv = slice(max(dj, 0), I.shape[1] + min(dj, 0))
    dv = slice(max(-dj, 0), I.shape[1] + min(-dj, 0))
    out[du, dv] = I[su, sv]
    return out


def _owned_band(owned, axis):
    """First and last index along axis with any owned node."""
    any_ = owned.any(axis=1 - axis)
    idx = np.nonzero(any_)[0]
    return int(idx[0]), int(idx[-1])


def _plane_indices(p):
    """Grid indices of the z-symmetry planes (exact multiples of pi).

    The v-grid of a mirrored patch hits its symmetry plane exactly (pads
    extend beyond); the reflection reference must be that grid index, not a
    band of some other mask, or pad nodes get tied to non-mirror partners.
    """
    import math as _m
    v = np.asarray(p.v, dtype=float)
    j0 = j1 = None
    if p.mirror_v0:
        plane = _m.pi * _m.ceil(v[0] / _m.pi - 1e-9)
        j0 = int(np.argmin(np.abs(v - plane)))
    if p.mirror_v1:
        plane = _m.pi * _m.floor(v[-1] / _m.pi + 1e-9)
        j1 = int(np.argmin(np.abs(v - plane)))
    return j0, j1


@dataclass
class CompositeSystem:
    patches: list
    geoms: list
    index: list                  # per patch (nu,nv) int array, -1 = no unknown
    kinds: list                  # per patch (nu,nv) uint8 row-kind array
    matrix: sparse.csr_matrix
    n: int
    a2_row: np.ndarray           # |A|^2 per row (0 on constraint rows)
    area_row: np.ndarray         # sqrt(g) du dv per row (0 on constraint rows)
    s_row: np.ndarray            # outward s-coordinate per row
    pde_row: np.ndarray          # bool mask of PDE rows
    diagnostics: dict = field(default_factory=dict)
    _lu: object = None

    # -- field <-> vector transport ----------------------------------------

    def gather(self, fields):
        x = np.zeros(self.n)
        for I, f in zip(self.index, fields):
            m = I >= 0
            x[I[m]] = np.where(np.isfinite(f[m]), f[m], 0.0)
        return x

    def scatter(self, x):
        out = []
        for I in self.index:
            f = np.full(I.shape, np.nan)
            m = I >= 0
            f[m] = x[I[m]]
            out.append(f)
        return out

    def lu(self):
        if self._lu is None:
            self._lu = splu(self.matrix.tocsc())
        return self._lu

    # -- inner products in the conformal metric ----------------------------

    def mass_weights(self, eps_h=0.0):
        """Quadrature weight per row of the (|A|^2/2 + eps) g inner product."""
        return np.where(self.pde_row,
                        (0.5 * self.a2_row + eps_h) * self.area_row, 0.0)

    def h_inner(self, fa, fb, eps_h=0.0):
        w = self.mass_weights(eps_h)
        return float(np.dot(w * self.gather(fa), self.gather(fb)))


def _pde_coefficients(geom: PatchGeometry, tau: float, potential):
    """Per-node stencil coefficient arrays for the 9-point operator."""
    p = geom.patch
    hu, hv = p.du, p.dv
    sq = np.sqrt(np.where(geom.detg > 0, geom.detg, np.nan))
    P11 = sq * geom.ginv[..., 0, 0]
    P12 = sq * geom.ginv[..., 0, 1]
    P22 = sq * geom.ginv[..., 1, 1]
    a_ip = 0.5 * (P11 + _shift(P11, -1, 0))
    a_im = 0.5 * (P11 + _shift(P11, 1, 0))
    b_jp = 0.5 * (P22 + _shift(P22, -1, 1))
    b_jm = 0.5 * (P22 + _shift(P22, 1, 1))
    P12pi, P12mi = _shift(P12, -1, 0), _shift(P12, 1, 0)
    P12pj, P12mj = _shift(P12, -1, 1), _shift(P12, 1, 1)
    bu = tau * (geom.ginv[..., 0, 0] * geom.Xu[..., 1]
                + geom.ginv[..., 0, 1] * geom.Xv[..., 1])
    bv = tau * (geom.ginv[..., 1, 0] * geom.Xu[..., 1]
                + geom.ginv[..., 1, 1] * geom.Xv[..., 1])
    pot = geom.A2 if potential is None else potential
    coefs = {
        (0, 0): -(a_ip + a_im) / (hu**2 * sq) - (b_jp + b_jm) / (hv**2 * sq)
                + pot,
        (1, 0): a_ip / (hu**2 * sq) + bu / (2 * hu),
        (-1, 0): a_im / (hu**2 * sq) - bu / (2 * hu),
        (0, 1): b_jp / (hv**2 * sq) + bv / (2 * hv),
        (0, -1): b_jm / (hv**2 * sq) - bv / (2 * hv),
        (1, 1): (P12pi + P12pj) / (4 * hu * hv * sq),
        (1, -1): -(P12pi + P12mj) / (4 * hu * hv * sq),
        (-1, 1): -(P12mi + P12pj) / (4 * hu * hv * sq),
        (-1, -1): (P12mi + P12mj) / (4 * hu * hv * sq),
    }
    return coefs


def _invert_bilinear(corners, target, iters=10):
    """Local coordinates (alpha, beta) of target in a bilinear cell.

    corners: (4, 3) in the order (0,0), (1,0), (0,1), (1,1).  Returns
    (alpha, beta, distance) of the closest point of the bilinear facet.
    """
    (x00, y00, z00), (x10, y10, z10), (x01, y01, z01), (x11, y11, z11) = \
        (tuple(map(float, c)) for c in corners)
    tx, ty, tz = float(target[0]), float(target[1]), float(target[2])
    a = b = 0.5
    for _ in range(iters):
        qax = (1 - b) * (x10 - x00) + b * (x11 - x01)
        qay = (1 - b) * (y10 - y00) + b * (y11 - y01)
        qaz = (1 - b) * (z10 - z00) + b * (z11 - z01)
        qbx = (1 - a) * (x01 - x00) + a * (x11 - x10)
        qby = (1 - a) * (y01 - y00) + a * (y11 - y10)
        qbz = (1 - a) * (z01 - z00) + a * (z11 - z10)
        w00 = (1 - a) * (1 - b)
        w10 = a * (1 - b)
        w01 = (1 - a) * b
        w11 = a * b
        rx = tx - (w00 * x00 + w10 * x10 + w01 * x01 + w11 * x11)
        ry = ty - (w00 * y00 + w10 * y10 + w01 * y01 + w11 * y11)
        rz = tz - (w00 * z00 + w10 * z10 + w01 * z01 + w11 * z11)
        g11 = qax * qax + qay * qay + qaz * qaz
        g12 = qax * qbx + qay * qby + qaz * qbz
        g22 = qbx * qbx + qby * qby + qbz * qbz
        det = g11 * g22 - g12 * g12
        if det <= 1e-300:
            return a, b, math.sqrt(rx * rx + ry * ry + rz * rz)
        ra = qax * rx + qay * ry + qaz * rz
        rb = qbx * rx + qby * ry + qbz * rz
        da = (g22 * ra - g12 * rb) / det
        db = (g11 * rb - g12 * ra) / det
        a = min(max(a + da, -0.5), 1.5)
        b = min(max(b + db, -0.5), 1.5)
        if abs(da) + abs(db) < 1e-12:
            break
    w00 = (1 - a) * (1 - b)
    w10 = a * (1 - b)
    w01 = (1 - a) * b
    w11 = a * b
    rx = tx - (w00 * x00 + w10 * x10 + w01 * x01 + w11 * x11)
    ry = ty - (w00 * y00 + w10 * y10 + w01 * y01 + w11 * y11)
    rz = tz - (w00 * z00 + w10 * z10 + w01 * z01 + w11 * z11)
    return a, b, math.sqrt(rx * rx + ry * ry + rz * rz)


def _invert_triangle(verts, target):
    """Barycentric weights of the closest point on a plane triangle."""
    V1, V2, V3 = verts
    M = np.stack([V2 - V1, V3 - V1], axis=1)
    lam, *_ = np.linalg.lstsq(M, target - V1, rcond=None)
    dist = float(np.linalg.norm(target - V1 - M @ lam))
    w = np.array([1.0 - lam[0] - lam[1], lam[0], lam[1]])
    return w, dist


def _normals_agree(nu_q, cidx, weights, target_nu):
    """Reject donor cells on a different local sheet (crossing-line guard)."""
    if target_nu is None or not np.all(np.isfinite(target_nu)):
        return True
    acc = np.zeros(3)
    tot = 0.0
    for c, w in zip(cidx, weights):
        n = nu_q[c]
        if np.all(np.isfinite(n)):
            acc += w * n
            tot += w
    if tot <= 0.0:
        return True
    return float(acc @ target_nu) / max(tot, 1e-12) >= 0.5


def _cell_fit(q, Iq, pde_mask, nu_q, oi, oj, target, target_nu, tol,
              slack=0.05):
    """Try to express target in donor cell (oi, oj); returns (score, ids, w).

    score = (all-corners-interior flag, -distance); four usable corners give
    a bilinear fit, exactly three give a plane-triangle fit.  Cells whose
    interpolated normal disagrees with the node's normal are rejected (two
    sheets of the surface may pass within mesh distance near crossing lines).
    """
    if not (0 <= oi < Iq.shape[0] - 1 and 0 <= oj < Iq.shape[1] - 1):
        return None
    cidx = [(oi, oj), (oi + 1, oj), (oi, oj + 1), (oi + 1, oj + 1)]
    ids = [Iq[c] for c in cidx]
    missing = [k for k, v in enumerate(ids) if v < 0]
    if len(missing) > 1:
        return None
    corners = np.array([q.X[c] for c in cidx])
    if not missing:
        a, b, dist = _invert_bilinear(corners, target)
        if not (-slack <= a <= 1 + slack and -slack <= b <= 1 + slack) \
                or dist > tol:
            return None
        w = np.array([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b])
        if not _normals_agree(nu_q, cidx, w, target_nu):
            return None
        allpde = all(pde_mask[c] for c in cidx)
        return (1 if allpde else 0, -dist), ids, w, (oi + a, oj + b)
    keep = [k for k in range(4) if k != missing[0]]
    w, dist = _invert_triangle(corners[keep], target)
    if dist > tol or np.min(w) < -slack or np.max(w) > 1 + slack:
        return None
    kept_idx = [cidx[k] for k in keep]
    if not _normals_agree(nu_q, kept_idx, w, target_nu):
        return None
    allpde = all(pde_mask[c] for c in kept_idx)
    return (1 if allpde else 0, -dist), [ids[k] for k in keep], w, None


def _lagrange3(xi):
    """Quadratic Lagrange weights on nodes {0, 1, 2} at local coordinate xi."""
    return np.array([0.5 * (xi - 1.0) * (xi - 2.0),
                     xi * (2.0 - xi),
                     0.5 * xi * (xi - 1.0)])


def _quad_upgrade(Iq, usable_q, tu, tv):
    """Biquadratic 3x3 Lagrange stencil at donor parameter point (tu, tv).

    Bilinear transfer at fringe nodes limits the composite operator to first
    order (the O(h^2) seam error meets the 1/h^2 stencil); a quadratic donor
    stencil restores second order.  Returns (ids, weights) or None if no fully
    usable 3x3 block surrounds the point.
    """
    ci = int(round(tu))
    cj = int(round(tv))
    ci = min(max(ci, 1), Iq.shape[0] - 2)
    cj = min(max(cj, 1), Iq.shape[1] - 2)
    if abs(tu - ci) > 1.0 or abs(tv - cj) > 1.0:
        return None
    block = Iq[ci - 1:ci + 2, cj - 1:cj + 2]
    if np.any(block < 0) or not np.all(usable_q[ci - 1:ci + 2, cj - 1:cj + 2]):
        return None
    w = np.outer(_lagrange3(tu - (ci - 1)), _lagrange3(tv - (cj - 1)))
    return list(block.ravel()), w.ravel()


def build_composite(patches, tau: float = 0.0, geoms=None, potentials=None,
                    wing_end: str = "neumann", interp_tol: float = 0.35,
                    k_candidates: int = 16) -> CompositeSystem:
    """Assemble the composite sparse operator over a patch roster.

    wing_end: 'neumann' ties wing-end pads by even reflection (free boundary,
    used for the eigenproblem); 'dirichlet' pins the boundary circle to zero
    and uses odd reflection in the pads (used for boundary-value solves).
    """
    if geoms is None:
        geoms = [fundamental_forms(p) for p in patches]
    if potentials is None:
        potentials = [None] * len(patches)

    # unknown indexing
    index, kinds, offsets = [], [], []
    total = 0
    for p in patches:
        usable = p.valid & np.isfinite(p.X).all(axis=-1)
        I = np.full(p.valid.shape, -1, dtype=np.int64)
        I[usable] = total + np.arange(int(usable.sum()))
        offsets.append(total)
        total += int(usable.sum())
        index.append(I)
        kinds.append(np.zeros(p.valid.shape, dtype=np.uint8))

    a2_row = np.zeros(total)
    area_row = np.zeros(total)
    s_row = np.zeros(total)
    rows, cols, vals = [], [], []
    structure = np.ones((3, 3), dtype=bool)

    # classification + PDE/mirror/reflect rows per patch
    for pi, (p, geom) in enumerate(zip(patches, geoms)):
        I, K = index[pi], kinds[pi]
        usable = I >= 0
        coefs = _pde_coefficients(geom, tau, potentials[pi])
        finite = usable.copy()
        for c in coefs.values():
            finite &= np.isfinite(c)
        # PDE rows need a full 9-point neighborhood and must stay inside the
        # owned parameter band (z-range, wing s-range).  The solve partition
        # (argmax dominance) assigns each surface point to exactly one chart:
        # deep overlapping PDE copies coupled only through distant fringes are
        # weakly determined and pollute the spectrum.
        band = np.ones_like(usable)
        part = p.meta.get("partition")
        if part is not None:
            band &= part
        is_wing = p.meta.get("kind") in WING_KINDS
        ii = np.arange(I.shape[0])[:, None]
        jj = np.arange(I.shape[1])[None, :]
        if is_wing:
            i0, i1 = _owned_band(p.owned, 0)
            band &= (ii >= i0) & (ii <= i1)
        jm0, jm1 = _plane_indices(p)
        if jm0 is not None:
            band &= jj >= jm0
        if jm1 is not None:
            band &= jj <= jm1
        if is_wing and (jm0 is None or jm1 is None):
            j0, j1 = _owned_band(p.owned, 1)
            if jm0 is None:
                band &= jj >= j0
            if jm1 is None:
                band &= jj <= j1
        pde = band & usable & binary_erosion(finite, structure=structure,
                                             iterations=1)
        K[pde] = KIND_PDE

        if is_wing and wing_end == "dirichlet":
            i0, i1 = _owned_band(p.owned, 0)
            bc = usable & (ii == i1)
            K[bc] = KIND_DIRICHLET
            pde &= ~bc
            K[pde] = KIND_PDE

        # PDE triplets
        for (di, dj), c in coefs.items():
            Ish = _shift_int(I, -di, -dj)     # unknown at (i+di, j+dj)
            m = pde
            if np.any(Ish[m] < 0):
                raise SingularBorderedSystem(
                    f"patch {p.name}: PDE stencil reaches a masked node")
            rows.append(I[m])
            cols.append(Ish[m])
            vals.append(c[m])
        a2_row[I[pde]] = geom.A2[pde]
        sq = np.sqrt(np.where(geom.detg > 0, geom.detg, 0.0))
        area_row[I[pde]] = (sq * p.du * p.dv)[pde]
        s_row[I[usable]] = p.sfield[usable]

        # mirror rows across z-symmetry planes
        aux = usable & (K == KIND_NONE)
        jj = np.arange(I.shape[1])[None, :]
        for flag, which in ((p.mirror_v0, 0), (p.mirror_v1, 1)):
            if not flag:
                continue
            jref = jm0 if which == 0 else jm1
            side = (jj < jref) if which == 0 else (jj > jref)
            Ipart = _shift_int(I, 0, 0)
            for i in range(I.shape[0]):
                for j in np.nonzero(aux[i] & side[0])[0]:
                    jp = 2 * jref - j
                    if 0 <= jp < I.shape[1] and I[i, jp] >= 0 and I[i, j] >= 0:
                        rows.append(np.array([I[i, j], I[i, j]]))
                        cols.append(np.array([I[i, j], I[i, jp]]))
                        vals.append(np.array([1.0, -1.0]))
                        K[i, j] = KIND_MIRROR
            aux = usable & (K == KIND_NONE)

        # wing-end reflection rows
        if is_wing:
            i0, i1 = _owned_band(p.owned, 0)
            sgn = 1.0 if wing_end == "neumann" else -1.0
            for i in range(i1 + 1, I.shape[0]):
                ip = 2 * i1 - i
                if not (0 <= ip < I.shape[0]):
                    continue
                for j in np.nonzero(usable[i] & (K[i] == KIND_NONE))[0]:
                    if I[ip, j] >= 0:
                        rows.append(np.array([I[i, j], I[i, j]]))
                        cols.append(np.array([I[i, j], I[ip, j]]))
                        vals.append(np.array([1.0, -sgn]))
                        K[i, j] = KIND_REFLECT
            if wing_end == "dirichlet":
                for i, j in np.argwhere(K == KIND_DIRICHLET):
                    rows.append(np.array([I[i, j]]))
                    cols.append(np.array([I[i, j]]))
                    vals.append(np.array([1.0]))

    # donor interpolation for the remaining fringe nodes
    trees, node_maps, pde_masks = [], [], []
    for pi, p in enumerate(patches):
        m = (index[pi] >= 0)
        pts = p.X[m]
        node_maps.append(np.argwhere(m))
        trees.append(cKDTree(pts) if len(pts) else None)
        pde_masks.append(kinds[pi] == KIND_PDE)

    n_zero = 0
    interp_res = 0.0
    hmax = max(max(p.du, p.dv) for p in patches)
    tol = interp_tol * max(hmax, 1e-12)
    for pi, p in enumerate(patches):
        I, K = index[pi], kinds[pi]
        todo = np.argwhere((I >= 0) & (K == KIND_NONE))
        if not len(todo):
            continue
        targets = p.X[todo[:, 0], todo[:, 1]]
        # one batched nearest-node query per donor patch
        queries = {}
        for qi in range(len(patches)):
            if qi == pi or trees[qi] is None:
                continue
            kq = max(2, min(k_candidates, len(node_maps[qi])))
            queries[qi] = trees[qi].query(targets, k=kq)
        for t, (i, j) in enumerate(todo):
            target = targets[t]
            target_nu = geoms[pi].nu[todo[t, 0], todo[t, 1]]
            order = sorted(queries, key=lambda qi: queries[qi][0][t, 0])
            best = None
            for qi in order:
                dists, nears = queries[qi][0][t], queries[qi][1][t]
                if dists[0] > 3.0 * hmax:
                    continue
                q, Iq = patches[qi], index[qi]
                seen = set()
                for nn in nears:
                    ci, cj = node_maps[qi][nn]
                    for oi in (ci - 1, ci):
                        for oj in (cj - 1, cj):
                            if (oi, oj) in seen:
                                continue
                            seen.add((oi, oj))
                            fit = _cell_fit(q, Iq, pde_masks[qi],
                                            geoms[qi].nu, oi, oj,
                                            target, target_nu, tol)
                            if fit is None:
                                continue
                            if best is None or fit[0] > best[0]:
                                best = fit + (qi,)
                    if best is not None and best[0][0] == 1:
                        break
                if best is not None and best[0][0] == 1:
                    break
            if best is None:
                rows.append(np.array([I[i, j]]))
                cols.append(np.array([I[i, j]]))
                vals.append(np.array([1.0]))
                K[i, j] = KIND_ZERO
                n_zero += 1
                continue
            score, ids, w, params, qbest = best
            if params is not None:
                up = _quad_upgrade(index[qbest], pde_masks[qbest], *params)
                if up is not None:
                    ids, w = up
            interp_res = max(interp_res, -score[1])
            rows.append(np.full(1 + len(ids), I[i, j]))
            cols.append(np.array([I[i, j]] + ids))
            vals.append(np.concatenate([[1.0], -w]))
            K[i, j] = KIND_INTERP

    A = sparse.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(total, total))

    # anchoring pass: mirror/reflect/interpolation rows define a node from
    # other nodes; reference cycles of full weight (two charts' fringe nodes
    # at the same surface point defining each other) make the matrix exactly
    # singular.  A constraint row resolves once the absolute weight it places
    # on still-unresolved rows is bounded away from 1 (a contractive cycle is
    # well-posed); residual full-weight cycles are pinned to zero.
    kind_row = np.zeros(total, dtype=np.uint8)
    for pi in range(len(patches)):
        I, K = index[pi], kinds[pi]
        m = I >= 0
        kind_row[I[m]] = K[m]
    constraint = np.isin(kind_row, (KIND_MIRROR, KIND_REFLECT, KIND_INTERP))
    refs = A.tocoo()
    off = refs.row != refs.col
    Rw = sparse.csr_matrix((np.abs(refs.data[off]),
                            (refs.row[off], refs.col[off])),
                           shape=(total, total))
    Rw = sparse.diags(constraint.astype(float)) @ Rw
    resolved = ~constraint
    for _ in range(500):
        mass = Rw @ (~resolved).astype(float)
        newly = constraint & ~resolved & (mass <= 1.0 - 1e-6)
        if not np.any(newly):
            break
        resolved |= newly
    pinned = constraint & ~resolved
    n_cycle = int(np.count_nonzero(pinned))
    n_refit = 0
    if n_cycle:
        # cycle members are usually the same surface point carried by several
        # charts (each defining the others).  Re-fit each from donor cells
        # restricted to resolved rows; unresolved corners count as missing, so
        # a coincident partner falls back to the plane-triangle fit of the
        # resolved corners.  Only irreparable rows get pinned to zero.
        res_grid = [np.where(index[pi] >= 0,
                             ~pinned[np.maximum(index[pi], 0)], False)
                    for pi in range(len(patches))]
        new_rows, new_cols, new_vals = [], [], []
        for pi, p in enumerate(patches):
            I, K = index[pi], kinds[pi]
            hit = (I >= 0) & pinned[np.maximum(I, 0)]
            for i, j in np.argwhere(hit):
                target = p.X[i, j]
                target_nu = geoms[pi].nu[i, j]
                best = None
                for qi in range(len(patches)):
                    if qi == pi or trees[qi] is None:
                        continue
                    kq = max(2, min(k_candidates, len(node_maps[qi])))
                    dists, nears = trees[qi].query(target, k=kq)
                    if np.atleast_1d(dists)[0] > 3.0 * hmax:
                        continue
                    Iq2 = np.where(res_grid[qi], index[qi], -1)
                    seen = set()
                    for nn in np.atleast_1d(nears):
                        ci, cj = node_maps[qi][nn]
                        for oi in (ci - 1, ci):
                            for oj in (cj - 1, cj):
                                if (oi, oj) in seen:
                                    continue
                                seen.add((oi, oj))
                                fit = _cell_fit(patches[qi], Iq2,
                                                pde_masks[qi], geoms[qi].nu,
                                                oi, oj, target, target_nu,
                                                tol, slack=1.0)
                                if fit is not None and (best is None
                                                        or fit[0] > best[0]):
                                    best = fit
                r = int(I[i, j])
                if best is None:
                    new_rows.append(np.array([r]))
                    new_cols.append(np.array([r]))
                    new_vals.append(np.array([1.0]))
                    K[i, j] = KIND_ZERO
                else:
                    _, ids, w, _ = best
                    new_rows.append(np.full(1 + len(ids), r))
                    new_cols.append(np.array([r] + list(ids)))
                    new_vals.append(np.concatenate([[1.0], -np.asarray(w)]))
                    K[i, j] = KIND_INTERP
                    n_refit += 1
        patch_mat = sparse.csr_matrix((np.concatenate(new_vals),
                                       (np.concatenate(new_rows),
                                        np.concatenate(new_cols))),
                                      shape=(total, total))
        A = (sparse.diags((~pinned).astype(float)) @ A + patch_mat).tocsr()

    pde_row = np.zeros(total, dtype=bool)
    counts = {k: 0 for k in range(7)}
    zero_next_to_pde = 0
    for pi in range(len(patches)):
        I, K = index[pi], kinds[pi]
        m = I >= 0
        pde_row[I[K == KIND_PDE]] = True
        for k in range(7):
            counts[k] += int(np.count_nonzero(K[m] == k))
        z = K == KIND_ZERO
        if np.any(z):
            near = binary_erosion(~z, structure=structure, iterations=1)
            zero_next_to_pde += int(np.count_nonzero(~near & (K == KIND_PDE)))
    diag = {"counts": {"pde": counts[KIND_PDE], "mirror": counts[KIND_MIRROR],
                       "reflect": counts[KIND_REFLECT],
                       "interp": counts[KIND_INTERP],
                       "zero": counts[KIND_ZERO],
                       "dirichlet": counts[KIND_DIRICHLET]},
            "interp_max_dist": interp_res,
            "zero_adjacent_to_pde": zero_next_to_pde,
            "cycles": n_cycle, "cycles_refit": n_refit}
    return CompositeSystem(patches, geoms, index, kinds, A, total,
                           a2_row, area_row, s_row, pde_row, diag)


# ---------------------------------------------------------------------------
# solves and eigenpairs


def composite_solve(sys: CompositeSystem, rhs_fields, boundary=0.0):
    """Solve the assembled system with right-hand side E on PDE rows.

    rhs_fields: per-patch arrays (the operator's target values); constraint
    rows keep homogeneous data.  Returns per-patch solution fields.
    """
    b = np.zeros(sys.n)
    x = sys.gather(rhs_fields)
    b[sys.pde_row] = x[sys.pde_row]
    if boundary != 0.0:
        for pi, p in enumerate(sys.patches):
            I, K = sys.index[pi], sys.kinds[pi]
            m = K == KIND_DIRICHLET
            b[I[m]] = boundary
    return sys.scatter(sys.lu().solve(b))


def composite_apply(sys: CompositeSystem, fields):
    """Apply the assembled operator to per-patch fields (PDE rows only)."""
    y = sys.matrix @ sys.gather(fields)
    y = np.where(sys.pde_row, y, np.nan)
    return sys.scatter(y)


def composite_eigen(sys: CompositeSystem, eps_h: float = 0.0, k: int = 8,
                    sigma: float = 0.0):
    """Eigenpairs of A u = lambda M u nearest sigma, M the conformal mass.

    M vanishes on constraint rows, so mirror/reflection/interpolation
    conditions hold exactly along the eigenvectors.  Returns (values,
    per-patch field lists) sorted by |lambda|, h-normalized.
    """
    M = sparse.diags(np.where(sys.pde_row,
                              0.5 * sys.a2_row + eps_h, 0.0)).tocsc()
    try:
        vals, vecs = eigs(sys.matrix.tocsc(), k=k, M=M, sigma=sigma)
    except RuntimeError:
        vals, vecs = eigs(sys.matrix.tocsc(), k=k, M=M, sigma=sigma + 1e-3)
    order = np.argsort(np.abs(vals.real))
    vals = vals.real[order]
    out = []
    w = sys.mass_weights(eps_h)
    for col in order:
        v = vecs[:, col].real
        nrm = math.sqrt(abs(float(np.dot(w * v, v))))
        out.append(sys.scatter(v / nrm if nrm > 0 else v))
    return vals, out
