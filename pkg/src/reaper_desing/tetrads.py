"""Tetrad angle algebra and the unbalanced graph sweep."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LostIntersection, NoIntersection, NotATetrad, OrderingChanged
from .reapers import (GrimReaperCurve, IntersectionGraph, SWEEP_X_TOL,
                      intersect_reapers)
from .util import gamma1, gamma2


@dataclass(frozen=True)
class Tetrad:
    """Four directing angles beta_1..beta_4, ascending counterclockwise.

    beta_1 is the first directing vector clockwise from e_y; with the curves'
    tangent-angle pair (alpha_min, alpha_max) this makes (beta_2, beta_3) the
    left-pointing pair and (beta_1, beta_4) the right-pointing pair.
    """

    beta: tuple

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.shape != (4,):
            raise NotATetrad("need exactly four angles")
        d = b - b[0]
        if not (0 < d[1] < d[2] < d[3] < 2 * math.pi):
            raise NotATetrad(f"ordering violated: {b}")
        object.__setattr__(self, "beta", tuple(float(x) for x in b))

    def as_array(self):
        return np.asarray(self.beta, dtype=float)


def tetrad_angles(T: Tetrad):
    """Derived angles {theta, theta_r, theta1, theta2} of a tetrad."""
    b1, b2, b3, b4 = T.beta
    return {
        "theta": (b1 - b2 + b3 - b4 + 2 * math.pi) / 4.0,
        "theta_r": (b1 + b2 + b3 + b4 - 4 * math.pi) / 4.0,
        "theta1": (b3 - b1 - math.pi) / 2.0,
        "theta2": (b4 - b2 - math.pi) / 2.0,
    }


def complete_tetrad(beta1, beta2, theta1_target, theta2_target) -> Tetrad:
    """Fix v1, v2 and choose v3, v4 to realize the target dislocation angles."""
    beta3 = beta1 + math.pi + 2.0 * theta1_target
    beta4 = beta2 + math.pi + 2.0 * theta2_target
    return Tetrad((beta1, beta2, beta3, beta4))


def is_acceptable(T: Tetrad, delta_theta: float) -> bool:
    ang = tetrad_angles(T)
    return (20 * delta_theta <= ang["theta"] <= math.pi / 2 - 20 * delta_theta
            and abs(ang["theta1"]) <= 2 * delta_theta
            and abs(ang["theta2"]) <= 2 * delta_theta)


# ---------------------------------------------------------------------------
# parameters xi


@dataclass
class Params:
    """The parameter vector xi = (theta, tau b', tau c', phi).

    theta: (K,2) per-vertex dislocation angles; tbprime/tcprime: per-reaper
    left-ray shifts premultiplied by tau; phi: (K,4) wing bendings.
    """

    theta: np.ndarray
    tbprime: np.ndarray
    tcprime: np.ndarray
    phi: np.ndarray

    @classmethod
    def zeros(cls, n_vertices: int, n_reapers: int) -> "Params":
        return cls(np.zeros((n_vertices, 2)), np.zeros(n_reapers),
                   np.zeros(n_reapers), np.zeros((n_vertices, 4)))

    def norm(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0
                   for a in (self.theta, self.tbprime, self.tcprime, self.phi))

    def copy(self) -> "Params":
        return Params(self.theta.copy(), self.tbprime.copy(),
                      self.tcprime.copy(), self.phi.copy())

    def to_json(self) -> str:
        return json.dumps({
            "theta": self.theta.tolist(),
            "tbprime": self.tbprime.tolist(),
            "tcprime": self.tcprime.tolist(),
            "phi": self.phi.tolist(),
        })

    @classmethod
    def from_json(cls, doc) -> "Params":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        return cls(np.asarray(doc["theta"], dtype=float),
                   np.asarray(doc["tbprime"], dtype=float),
                   np.asarray(doc["tcprime"], dtype=float),
                   np.asarray(doc["phi"], dtype=float))


# ---------------------------------------------------------------------------
# unbalanced graph


def reaper_through(point, angle, tau) -> tuple[GrimReaperCurve, float]:
    """The grim reaper through `point` whose tangent there is e[angle].

    Only right-pointing tangents (cos angle > 0) exist on a grim reaper; the
    inversion is tau s = arcsinh(tan(angle)).
    """
    if math.cos(angle) <= 0:
        raise ValueError("reaper tangents have positive x-component")
    t = math.asinh(math.tan(angle))
    b = point[0] - gamma1(t) / tau
    c = point[1] - gamma2(t) / tau
    return GrimReaperCurve(float(b), float(c), tau), t / tau


@dataclass
class UnbalancedVertex:
    point: np.ndarray
    beta: np.ndarray            # dislocated tetrad angles
    curves: tuple               # (n, m) with alpha_max curve first (continues beta_1)
    params: tuple               # intersection arclengths on the incoming curves
    out_curves: dict            # direction index (0 for beta_1, 3 for beta_4) -> curve


@dataclass
class UnbalancedGraph:
    base: IntersectionGraph
    vertices: list
    left_ray_curves: dict       # reaper id -> translated curve
    right_ray_curves: dict      # reaper id -> final fitted curve


def build_unbalanced_graph(G: IntersectionGraph, xi: Params, tau: float) -> UnbalancedGraph:
    """Left-to-right sweep constructing the unbalanced graph.

    Left-ray reapers are translated by (b', c') = (tb', tc')/tau, vertices are
    re-intersected in sweep order, the left directing pair is kept, and the
    right pair is completed from the imposed (theta_{k,1}, theta_{k,2}).
    """
    fam = G.family
    shifts_b = xi.tbprime / tau
    shifts_c = xi.tcprime / tau
    current = {n: GrimReaperCurve(fam[n].b + shifts_b[n], fam[n].c + shifts_c[n], tau)
               for n in range(len(fam))}
    left_rays = dict(current)

    vertices = []
    for k, v in enumerate(G.vertices):
        n, m = v.curves
        try:
            res = intersect_reapers(current[n], current[m])
        except NoIntersection as exc:
            raise LostIntersection(f"vertex {k} lost after perturbation") from exc
        a_n = math.atan2(*(current[n].tangent(res.s0)[::-1]))
        a_m = math.atan2(*(current[m].tangent(res.s1)[::-1]))
        if a_n >= a_m:
            c_max, c_min = n, m
            a_max, a_min = a_n, a_m
            s_max_par, s_min_par = res.s0, res.s1
        else:
            c_max, c_min = m, n
            a_max, a_min = a_m, a_n
            s_max_par, s_min_par = res.s1, res.s0
        th1, th2 = (xi.theta[k] if xi.theta.size else (0.0, 0.0))
        beta2 = math.pi + a_min
        beta3 = math.pi + a_max
        beta1 = beta3 - math.pi - 2.0 * th1
        beta4 = beta2 + math.pi + 2.0 * th2
        Tetrad((beta1, beta2, beta3, beta4))  # ordering check
        out1, _ = reaper_through(res.point, beta1, tau)
        out4, _ = reaper_through(res.point, beta4, tau)
        vertices.append(UnbalancedVertex(res.point,
                                         np.array([beta1, beta2, beta3, beta4]),
                                         (c_max, c_min),
                                         (s_max_par, s_min_par),
                                         {0: out1, 3: out4}))
        current[c_max] = out1
        current[c_min] = out4

    # sweep-order consistency
    xs = [v.point[0] for v in vertices]
    ys = [v.point[1] for v in vertices]
    for i in range(len(vertices) - 1):
        if xs[i] > xs[i + 1] + SWEEP_X_TOL:
            raise OrderingChanged(f"vertices {i},{i+1} flipped")
        if abs(xs[i] - xs[i + 1]) <= SWEEP_X_TOL and ys[i] < ys[i + 1]:
            raise OrderingChanged(f"vertices {i},{i+1} tie-break flipped")

    return UnbalancedGraph(G, vertices, left_rays, dict(current))
