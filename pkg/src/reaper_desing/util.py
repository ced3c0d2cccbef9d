"""Shared numerics: cut-off functions, grim-reaper primitives, frames, defaults."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def gamma1(s):
    """arctan(sinh s) (the gudermannian function)."""
    return np.arctan(np.sinh(s))


def gamma2(s):
    """log(cosh s), computed overflow-safely."""
    s = np.asarray(s, dtype=float)
    return np.abs(s) + np.log1p(np.exp(-2.0 * np.abs(s))) - np.log(2.0)


def sech(s):
    return 1.0 / np.cosh(s)


def psi(t):
    """Increasing C^2 cut-off: 0 for t <= 1/3, 1 for t >= 2/3, quintic in between.

    The transition is the unique quintic with vanishing first and second
    derivatives at both ends (smoothstep of order 2).
    """
    t = np.asarray(t, dtype=float)
    u = np.clip((t - 1.0 / 3.0) * 3.0, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def psi_ab(a, b, s):
    """psi[a,b](s) = psi((s-a)/(b-a)): 0 near a, 1 near b; a > b allowed (decreasing)."""
    return psi((np.asarray(s, dtype=float) - a) / (b - a))


def e_vec(theta):
    """Unit vector e[theta] = (cos, sin) in the plane; broadcasts."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def e_perp(theta):
    """e'[theta] = (-sin, cos), the counterclockwise normal of e[theta]."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)


def rot2(phi):
    """2x2 counterclockwise rotation matrix."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def rotz(points, phi):
    """Rotate 3-vectors (…,3) counterclockwise by phi about the z-axis; phi may broadcast."""
    p = np.asarray(points, dtype=float)
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    out = np.empty_like(p)
    out[..., 0] = c * p[..., 0] - s * p[..., 1]
    out[..., 1] = s * p[..., 0] + c * p[..., 1]
    out[..., 2] = p[..., 2]
    return out


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class DeskParams:
    """Global desk-scale constants shared across modules.

    delta_theta : sector/dislocation angular scale.
    delta_s     : wing cut-off scale; region boundaries sit at multiples of delta_s/tau.
    epsilon_wing: the wing graph bound epsilon (|f_theta| <= eps * e^{-s}).
    gamma       : decay exponent of all weighted sup norms, in (0,1).
    epsilon_sep : asymptote-separation margin for general position.
    """

    delta_theta: float = 0.015
    delta_s: float = 0.1
    epsilon_wing: float = 1e-3
    gamma: float = 0.7
    epsilon_sep: float = 0.05
    zeta: float = 1.0

    @property
    def theta_min(self):
        return 10.0 * self.delta_theta

    @property
    def theta_max(self):
        return np.pi / 2.0 - 10.0 * self.delta_theta


DEFAULTS = DeskParams()
