"""Model solver on the flat cylinder [0, l] x S^1 and its perturbations.

Fields live on a uniform grid: s = linspace(0, l, ns), z_j = 2 pi j / nz
(periodic, endpoint excluded).  The solver works mode by mode in z:

* mode 0 is solved in the decay class, w0(s) = int_s^l (r - s) E0(r) dr,
  which satisfies w0'' = E0 with w0(l) = w0'(l) = 0 and ignores boundary
  data (constants and linear growth are not in the class);
* modes k >= 1 split into an analytically exact harmonic part carrying the
  Dirichlet data at s = 0 (zero at s = l) and a finite-difference particular
  part with zero Dirichlet data at both ends.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import eigh_tridiagonal, solve_banded

from .errors import NoConvergence


def cylinder_grid(l: float, ns: int, nz: int):
    s = np.linspace(0.0, l, ns)
    z = 2.0 * math.pi * np.arange(nz) / nz
    return s, z


def default_steps(l: float):
    """Spec'd discretization: s-step min(0.05, l/2000), 64 z-modes."""
    hs = min(0.05, l / 2000.0)
    ns = int(round(l / hs)) + 1
    return ns, 128  # 128 z-points resolve 64 modes


def _harmonic_mode(fk, k, s, l):
    """fk * sinh(k (l - s)) / sinh(k l), computed without overflow."""
    # = fk e^{-ks} (1 - e^{-2k(l-s)}) / (1 - e^{-2kl})
    return fk * np.exp(-k * s) * (-np.expm1(-2 * k * (l - s))) / (-math.expm1(-2 * k * l))


def _particular_mode(Ek, k, s):
    """(d^2/ds^2 - k^2) w = Ek, w(0) = w(l) = 0, 2nd-order tridiagonal."""
    n = len(s)
    h = s[1] - s[0]
    if n < 3:
        return np.zeros_like(Ek)
    ab = np.zeros((3, n - 2), dtype=Ek.dtype)
    ab[0, 1:] = 1.0 / h**2
    ab[1, :] = -2.0 / h**2 - k**2
    ab[2, :-1] = 1.0 / h**2
    w = np.zeros(n, dtype=Ek.dtype)
    w[1:-1] = solve_banded((1, 1), ab, Ek[1:-1])
    return w


def solve_cylinder_dirichlet(E, f, l, maxiter: int = 1, tol: float = 1e-11,
                             perturbation=None):
    """Solve w'' + w_zz = E with Dirichlet data f at s = 0 in the decay class.

    E: (ns, nz) right-hand side (may be zeros); f: (nz,) boundary values at
    s = 0 or None.  With `perturbation` (a callable w -> field), solves
    (L0 + P) w = E by fixed-point iteration around the flat solve.
    """
    E = np.asarray(E, dtype=float)
    ns, nz = E.shape
    s = np.linspace(0.0, l, ns)
    fz = np.zeros(nz) if f is None else np.asarray(f, dtype=float)

    def flat_solve(rhs):
        Eh = np.fft.rfft(rhs, axis=1)
        fh = np.fft.rfft(fz)
        W = np.zeros_like(Eh)
        # mode 0: decay class, double integral from the far end
        E0 = Eh[:, 0].real
        C1 = cumulative_simpson(E0, x=s, initial=0.0)
        I1 = C1[-1] - C1                      # int_s^l E0
        C2 = cumulative_simpson(I1, x=s, initial=0.0)
        W[:, 0] = C2[-1] - C2                 # int_s^l I1
        for k in range(1, Eh.shape[1]):
            W[:, k] = (_harmonic_mode(fh[k], k, s, l)
                       + _particular_mode(Eh[:, k], k, s))
        return np.fft.irfft(W, n=nz, axis=1)

    w = flat_solve(E)
    if perturbation is None:
        return w, float(np.mean(w[0]))
    for _ in range(maxiter):
        w_new = flat_solve(E - perturbation(w))
        delta = float(np.max(np.abs(w_new - w)))
        w = w_new
        if delta <= tol * (1.0 + float(np.max(np.abs(w)))):
            return w, float(np.mean(w[0]))
    raise NoConvergence(f"cylinder fixed point stalled at delta={delta:.3e}")


def smallest_eigenvalue(l: float, ns: int = 2001, perturbation: float = 0.0,
                        c_weight: float = 0.5) -> float:
    """Smallest Dirichlet eigenvalue of the (possibly perturbed) cylinder.

    Unperturbed: -(d^2/ds^2 + d^2/dz^2) on [0, l] x S^1 (Dirichlet at both
    ends); modes k >= 1 contribute k^2 + O(1) >= 1, so for l > pi the minimum
    is the k = 0 value ~ (pi / l)^2.  `perturbation` is the smallness measure
    of a model metric/potential perturbation chi(s) = d(s) = eps e^{-c s}
    (weighted norm exactly eps): the operator becomes
    -d/ds[(1 + chi) d/ds] - d(s) for mode 0.
    """
    h = l / (ns - 1)
    s = np.linspace(0.0, l, ns)
    eps = float(perturbation)
    chi = eps * np.exp(-c_weight * s)
    pot = eps * np.exp(-c_weight * s)
    a_half = 1.0 + 0.5 * (chi[:-1] + chi[1:])      # 1 + chi at midpoints
    d = (a_half[:-1] + a_half[1:]) / h**2 - pot[1:-1]
    e = -a_half[1:-1] / h**2
    mu0 = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))[0][0]
    return float(min(mu0, 1.0 + math.pi**2 / l**2))


def decay_norm(field, s, gamma):
    """sup of e^{gamma s} |field| over the cylinder."""
    w = np.exp(gamma * s)[:, None]
    return float(np.max(np.abs(field) * w))


# ---------------------------------------------------------------------------
# approximate kernel of the normalized stability operator


@dataclass
class KernelBasis:
    """Eigenpairs of L_h with |lambda| <= c, h-orthonormal, with correlations
    against the translation fields e_x.nu and e_y.nu, and the observed gap to
    the rest of the symmetric-class spectrum."""

    values: np.ndarray
    vectors: list                 # per eigenpair: list of per-patch fields
    correlations: np.ndarray
    gap: float
    c: float
    epsilon_h: float
    system: object = None


def scherk_period_mesh(theta: float, h: float = 0.1, wing_s: float = 6.0,
                       epsilon_wing: float = 1e-3):
    """One period of the singly periodic minimal surface as a patch roster."""
    from .scherk import (ScherkSurface, calibrate_wing_constant,
                         scherk_core_patches, scherk_wing_patch)

    a = calibrate_wing_constant(theta, theta, epsilon_wing)
    surf = ScherkSurface(theta, a, epsilon_wing)
    patches = scherk_core_patches(surf, a + 1.0, h)
    for w in (1, 2, 3, 4):
        patches.append(scherk_wing_patch(surf, w, wing_s, h))
    return patches


def approximate_kernel(patches, c: float = 0.1, epsilon_h: float = 1e-3,
                       geoms=None, k: int = 8) -> KernelBasis:
    """Small-|lambda| eigenpairs of L_h = Delta_h + 2|A|^2/(|A|^2 + 2 eps_h).

    Solved as the generalized pencil (Delta_g + |A|^2) u = lambda
    (|A|^2/2 + eps_h) u on the composite discretization, restricted to the
    z-reflection-symmetric class (mirror rows enforce even reflection, which
    excludes the odd field e_z.nu; free wing ends keep the horizontal
    translation fields in the near-kernel).
    """
    from .composite import build_composite, composite_eigen
    from .discgeo import fundamental_forms

    if geoms is None:
        geoms = [fundamental_forms(p) for p in patches]
    sys_ = build_composite(patches, geoms=geoms)
    vals, vecs = composite_eigen(sys_, eps_h=epsilon_h, k=k)
    keep = np.abs(vals) <= c
    rest = np.abs(vals)[~keep]
    gap = float(rest.min()) if rest.size else float("inf")
    sel_vals = vals[keep]
    sel = [vecs[i] for i in np.nonzero(keep)[0]]

    w = sys_.mass_weights(epsilon_h)
    span = [sys_.gather([g.nu[..., comp] for g in geoms]) for comp in (0, 1)]
    gram = np.array([[np.sum(w * a_ * b_) for b_ in span] for a_ in span])

    # h-orthonormalize (modified Gram-Schmidt) and measure span correlations
    flats, out_fields, corrs = [], [], []
    for fields in sel:
        v = sys_.gather(fields)
        for u in flats:
            v = v - np.sum(w * u * v) * u
        nrm = math.sqrt(float(np.sum(w * v * v)))
        v = v / nrm
        flats.append(v)
        out_fields.append(sys_.scatter(v))
        coef = np.linalg.solve(gram, np.array([np.sum(w * v * s_)
                                               for s_ in span]))
        proj = coef[0] * span[0] + coef[1] * span[1]
        corrs.append(math.sqrt(float(np.sum(w * proj * proj)))
                     / math.sqrt(float(np.sum(w * v * v))))
    return KernelBasis(values=np.asarray(sel_vals), vectors=out_fields,
                       correlations=np.asarray(corrs), gap=gap, c=c,
                       epsilon_h=epsilon_h, system=sys_)
