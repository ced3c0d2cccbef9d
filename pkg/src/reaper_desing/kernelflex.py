"""Kernel-flexing fields and the linear solve modulo their span.

Two families of fields flex the approximate kernel of the linearized
translator operator L = Delta + |A|^2 + tau e_y.grad on the dislocated
surface Sigma[T, phi, tau]:

* the unbalancing fields w_1, w_2: phi-derivatives of the mean curvature
  pulled back through the dislocation maps Z_1, Z_2 (supported on the core,
  s <= 0);
* the bending fields wbar_1..wbar_4 = L ubar_i, where ubar_i comes from
  differentiating the straightened wing family in the i-th bending angle and
  correcting on the wings by a flat-cylinder solve.

solve_modulo_kernel then solves the bordered system L v - sum theta_j w_j -
sum phi_i wbar_i = E with v = 0 on the wing-end boundary, orthogonality to
the approximate kernel, and wing-flux conditions that place v in the decay
class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .composite import build_composite, composite_apply
from .cylsolver import approximate_kernel, solve_cylinder_dirichlet
from .desing import (DesingSurface, apply_z1, apply_z2, build_desing_surface,
                     straighten)
from .discgeo import PatchGrid, apply_linearized_operator, fundamental_forms
from .errors import SingularBorderedSystem
from .tetrads import Tetrad, tetrad_angles
from .util import DEFAULTS, psi_ab


def straight_tetrad(theta: float, beta_r: float = 0.0) -> Tetrad:
    """The unbent tetrad with crossing half-angle theta."""
    return Tetrad((theta + beta_r, math.pi - theta + beta_r,
                   math.pi + theta + beta_r, 2.0 * math.pi - theta + beta_r))


@dataclass
class SigmaMesh:
    """A dislocated surface with its discrete geometry and lazy solvers."""

    surface: DesingSurface
    h: float
    geoms: list
    delta_s: float = DEFAULTS.delta_s
    delta_theta: float = DEFAULTS.delta_theta
    _system: object = None
    _kernel: object = None

    @property
    def patches(self):
        return self.surface.patches

    @property
    def tau(self):
        return self.surface.tau

    @property
    def s_max(self):
        """Wing length of the meshed surface (s at the wing-end boundary)."""
        return float(max(np.nanmax(np.where(p.owned, p.sfield, -np.inf))
                         for p in self.patches))

    def system(self):
        """Composite operator with pinned wing ends (boundary-value solves)."""
        if self._system is None:
            self._system = build_composite(self.patches, tau=self.tau,
                                           geoms=self.geoms,
                                           wing_end="dirichlet")
        return self._system

    def kernel(self, c: float = 0.5, epsilon_h: float = 1e-3):
        if self._kernel is None:
            self._kernel = approximate_kernel(self.patches, c=c,
                                              epsilon_h=epsilon_h,
                                              geoms=self.geoms)
        return self._kernel


def sigma_mesh(T: Tetrad, phi=None, tau: float = 0.1, h: float = 0.12,
               resolution: int | None = None,
               delta_s: float = DEFAULTS.delta_s,
               delta_theta: float = DEFAULTS.delta_theta) -> SigmaMesh:
    """Build Sigma[T, phi, tau] and its discrete geometry.

    `resolution` (nodes across the core) overrides `h`.
    """
    from .scherk import calibrate_wing_constant

    if resolution is not None:
        th = tetrad_angles(T)["theta"]
        a = calibrate_wing_constant(th, th, DEFAULTS.epsilon_wing)
        h = 2.0 * (a + 1.0) / resolution
    surface = build_desing_surface(T, phi=phi, tau=tau, h=h,
                                   delta_s=delta_s, delta_theta=delta_theta)
    geoms = [fundamental_forms(p) for p in surface.patches]
    return SigmaMesh(surface, h, geoms, delta_s, delta_theta)


# ---------------------------------------------------------------------------
# unbalancing fields w_1, w_2


def _curvature_after(patches, mapper):
    """Mean curvature of each patch after mapping its immersion."""
    out = []
    for p in patches:
        q = PatchGrid(p.name, p.u, p.v, mapper(p.X), p.valid,
                      orient=np.asarray(p.orient).copy(), owned=p.owned,
                      sfield=p.sfield, mirror_v0=p.mirror_v0,
                      mirror_v1=p.mirror_v1, meta=dict(p.meta))
        out.append(fundamental_forms(q).H)
    return out


def compute_w(mesh: SigmaMesh, j: int, step: float = 1e-4):
    """w_j = d/dphi at 0 of the mean curvature pulled back through Z_j.

    Central finite differences at steps `step` and `step`/2, Richardson
    combined (the quotient is smooth in phi).  Supported on the core
    (s <= 0): the dislocation maps fix the wings' parametrized region.
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    zmap = apply_z1 if j == 1 else apply_z2
    dth = mesh.delta_theta

    def diff(d):
        Hp = _curvature_after(mesh.patches, lambda X: zmap(X, +d, dth))
        Hm = _curvature_after(mesh.patches, lambda X: zmap(X, -d, dth))
        return [(a - b) / (2.0 * d) for a, b in zip(Hp, Hm)]

    d1 = diff(step)
    d2 = diff(step / 2.0)
    return [(4.0 * b - a) / 3.0 for a, b in zip(d1, d2)]


def flex_integral(mesh: SigmaMesh, fields):
    """int field . nu dmu over the meshed half period."""
    from .discgeo import surface_normal_integral

    return surface_normal_integral(mesh.patches, mesh.geoms, fields)


# ---------------------------------------------------------------------------
# bending fields ubar_i, wbar_i


def _deformation_field(mesh: SigmaMesh, i: int, step: float):
    """Y = d/dt at 0 of the straightened wing family in the i-th bending."""
    S = mesh.surface
    T, phi, tau = S.tetrad, np.asarray(S.phi, float), S.tau
    a = S.surf.a
    s_max = mesh.s_max
    e = np.zeros(4)
    e[i] = 1.0
    fam = []
    for sgn in (+1.0, -1.0):
        Tp, _ = straighten(T, phi, tau, sgn * step * e, a=a,
                           delta_s=mesh.delta_s)
        Sp = build_desing_surface(Tp, phi - sgn * step * e, tau, mesh.h,
                                  s_max=s_max, a=a, delta_s=mesh.delta_s,
                                  delta_theta=mesh.delta_theta)
        fam.append(Sp.patches)
    out = []
    for pp, pm in zip(*fam):
        Y = (pp.X - pm.X) / (2.0 * step)
        both = pp.valid & pm.valid
        out.append(np.where(both[..., None], Y, np.nan))
    return out


def _wing_cylinder_correction(p, E_wing, s_max):
    """Solve the flat-cylinder problem on a wing chart (even z-reflection)."""
    s = p.u
    i_sel = np.nonzero((s >= -1e-12) & (s <= s_max + 1e-12))[0]
    i0, i1 = int(i_sel[0]), int(i_sel[-1])
    z = p.v
    j_sel = np.nonzero((z >= -1e-12) & (z <= math.pi + 1e-12))[0]
    j0, j1 = int(j_sel[0]), int(j_sel[-1])
    nzh = j1 - j0                       # intervals on the half period
    E_half = np.nan_to_num(E_wing[i0:i1 + 1, j0:j1 + 1])
    nz = 2 * nzh
    E_cyl = np.zeros((i1 - i0 + 1, nz))
    E_cyl[:, :nzh + 1] = E_half
    for k in range(1, nzh):
        E_cyl[:, nzh + k] = E_half[:, nzh - k]
    v_cyl, _ = solve_cylinder_dirichlet(E_cyl, None, float(s[i1] - s[i0]))
    v = np.zeros_like(E_wing)
    v[i0:i1 + 1, j0:j1 + 1] = v_cyl[:, :nzh + 1]
    return v


def compute_wbar(mesh: SigmaMesh, i: int, gamma: float = DEFAULTS.gamma,
                 step: float = 1e-4):
    """Bending pair (ubar_i, wbar_i = L ubar_i).

    ubar'_i = Y.nu from the straightened family; a flat-cylinder solve kills
    L ubar'_i on the wings beyond the transition, turned on by psi[1,2](s).
    Both parts vanish at the wing-end boundary (the straightening pins the
    asymptotic reapers there; the cylinder solve is pinned), so no end
    cut-off is needed.
    """
    tau = mesh.tau
    s_max = mesh.s_max
    Y = _deformation_field(mesh, i, step)
    ubar_p = [np.einsum("ijk,ijk->ij", y, g.nu)
              for y, g in zip(Y, mesh.geoms)]
    lub = []
    for g, u in zip(mesh.geoms, ubar_p):
        val, ok = apply_linearized_operator(g, np.nan_to_num(u), tau)
        lub.append(np.where(ok, val, 0.0))
    # the global surface normal alternates relative to the bending rotation
    # across wings; normalize so each ubar_i is positive on its own wing
    sgn = 1.0 if i % 2 else -1.0
    ubar = []
    for p, u, e in zip(mesh.patches, ubar_p, lub):
        u = sgn * np.nan_to_num(u)
        if p.meta.get("kind") == "dwing":
            v = _wing_cylinder_correction(p, -sgn * e, s_max)
            u = u + psi_ab(1.0, 2.0, p.sfield) * v
        ubar.append(u)
    wbar = []
    for g, u in zip(mesh.geoms, ubar):
        val, ok = apply_linearized_operator(g, u, tau)
        wbar.append(np.where(ok, val, np.nan))
    return ubar, wbar


@dataclass
class FlexBasis:
    """w_1, w_2 (unbalancing, supported s <= 0) and the four bending pairs."""

    w: list                       # [w_1 fields, w_2 fields]
    ubar: list                    # 4 lists of per-patch fields
    wbar: list                    # 4 lists of per-patch fields


def flex_basis(mesh: SigmaMesh, gamma: float = DEFAULTS.gamma,
               step: float = 1e-4) -> FlexBasis:
    w = [compute_w(mesh, 1, step), compute_w(mesh, 2, step)]
    ubar, wbar = [], []
    for i in range(4):
        u, wb = compute_wbar(mesh, i, gamma, step)
        ubar.append(u)
        wbar.append(wb)
    return FlexBasis(w=w, ubar=ubar, wbar=wbar)


# ---------------------------------------------------------------------------
# solve modulo the flex span


@dataclass
class ModKernelSolution:
    v: list                       # per-patch fields
    theta_E: np.ndarray           # 2 unbalancing coefficients
    phi_E: np.ndarray             # 4 bending coefficients
    diagnostics: dict = field(default_factory=dict)


def _flux_rows(mesh: SigmaMesh, sys_):
    """Mean-value functionals over a far cross-band of each wing.

    Row j samples v on wing j's nodes with s in [s_max-2, s_max-1]; a
    non-zero mean is the non-decaying (constant) wing mode.
    """
    s_max = mesh.s_max
    rows = []
    for wi, (p, I, K) in enumerate(zip(mesh.patches, sys_.index, sys_.kinds)):
        if p.meta.get("kind") != "dwing":
            continue
        band = (p.sfield >= s_max - 2.0) & (p.sfield <= s_max - 1.0)
        band &= (I >= 0) & (K == 1)           # PDE rows only
        idx = I[band]
        row = np.zeros(sys_.n)
        if idx.size:
            row[idx] = 1.0 / idx.size
        rows.append(row)
    return rows


def solve_modulo_kernel(mesh: SigmaMesh, E, gamma: float = DEFAULTS.gamma,
                        basis: FlexBasis | None = None,
                        kernel=None) -> ModKernelSolution:
    """Solve L v - sum theta_j w_j - sum phi_i wbar_i = E with v = 0 on the
    boundary, orthogonality to the approximate kernel, and zero wing fluxes.

    E: list of per-patch fields.  Returns the unique (v, theta, phi).
    """
    sys_ = mesh.system()
    if basis is None:
        basis = flex_basis(mesh, gamma)
    if kernel is None:
        kernel = mesh.kernel()
    n = sys_.n
    pde = sys_.pde_row

    cols = []
    for fields in basis.w + basis.wbar:
        c = sys_.gather(fields)
        cols.append(np.where(pde, c, 0.0))
    W = sparse.csc_matrix(np.column_stack(cols))

    wmass = sys_.mass_weights(kernel.epsilon_h)
    orth = [wmass * sys_.gather(v) for v in kernel.vectors]
    flux = _flux_rows(mesh, sys_)
    C = sparse.csc_matrix(np.vstack(orth + flux))

    # the flexed responses phi_i ubar_i live inside v, so zero flux of v
    # itself is the decay condition (the border block against (theta, phi)
    # vanishes in the monolithic formulation)
    ncon = len(orth) + len(flux)
    K = sparse.bmat([[sys_.matrix, -W],
                     [C, sparse.csc_matrix((ncon, 6))]], format="csc")
    b = np.zeros(n + ncon)
    b[:n] = np.where(pde, sys_.gather(E), 0.0)
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise SingularBorderedSystem(str(exc)) from exc
    x = lu.solve(b)
    v = x[:n]
    theta = x[n:n + 2]
    phi = x[n + 2:n + 6]
    resid = sys_.matrix @ v - W @ x[n:] - b[:n]
    scale = float(np.max(np.abs(b[:n]))) or 1.0
    diag = {
        "flux": np.array([float(r @ v) for r in flux]),
        "residual": float(np.max(np.abs(np.where(pde, resid, 0.0)))),
        "residual_rel": float(np.max(np.abs(np.where(pde, resid, 0.0))))
                        / scale,
    }
    return ModKernelSolution(v=sys_.scatter(v), theta_E=theta, phi_E=phi,
                             diagnostics=diag)
