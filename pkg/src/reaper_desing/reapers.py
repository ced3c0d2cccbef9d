"""Grim reaper curves: evaluation, pairwise intersection, general position, graph G.

A grim reaper at scale tau with center (b, c) is the curve
    y - c = -log(cos(tau (x - b))) / tau,  x in (b - pi/(2 tau), b + pi/(2 tau)),
parametrized by arclength as p(s) = (gamma1(tau s)/tau + b, gamma2(tau s)/tau + c)
with gamma1 = arctan o sinh and gamma2 = log o cosh.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import Degenerate, NoIntersection, Violation
from .util import gamma1, gamma2, sech, wrap_angle

#: tolerance for declaring two intersection points concurrent (triple violation)
TRIPLE_TOL = 1e-6
#: abscissa tolerance in the left-to-right vertex ordering tie-break
SWEEP_X_TOL = 1e-9


@dataclass(frozen=True)
class GrimReaperCurve:
    b: float
    c: float
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def domain(self):
        half = np.pi / (2.0 * self.tau)
        return (self.b - half, self.b + half)

    def point(self, s):
        s = np.asarray(s, dtype=float)
        t = self.tau * s
        return np.stack([gamma1(t) / self.tau + self.b,
                         gamma2(t) / self.tau + self.c], axis=-1)

    def tangent(self, s):
        t = self.tau * np.asarray(s, dtype=float)
        return np.stack([sech(t), np.tanh(t)], axis=-1)

    def normal(self, s):
        """Unit normal with positive e_y component (the soliton direction)."""
        t = self.tau * np.asarray(s, dtype=float)
        return np.stack([-np.tanh(t), sech(t)], axis=-1)

    def curvature(self, s):
        """Curvature kappa = tau * e_y . nu (the soliton identity at scale tau)."""
        t = self.tau * np.asarray(s, dtype=float)
        return self.tau * sech(t)

    def y_of_x(self, x):
        u = self.tau * (np.asarray(x, dtype=float) - self.b)
        return self.c - np.log(np.cos(u)) / self.tau

    def s_of_x(self, x):
        """Arclength parameter of the point with abscissa x."""
        u = self.tau * (np.asarray(x, dtype=float) - self.b)
        return np.arcsinh(np.tan(u)) / self.tau

    def equation_residual(self, p):
        p = np.asarray(p, dtype=float)
        return p[..., 1] - self.y_of_x(p[..., 0])


def evaluate_reaper(r: GrimReaperCurve, s):
    """Point and unit tangent at arclength s."""
    return r.point(s), r.tangent(s)


def family_from_json(doc) -> tuple[list[GrimReaperCurve], float]:
    """Build the rescaled family from a document {"tau", "reapers": [{"b","c"}], "epsilon"}.

    The document's centers are in unscaled units; the working curves
    are the rescaled ones (centers divided by tau).
    """
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    tau = float(doc["tau"])
    fam = [GrimReaperCurve(float(r["b"]) / tau, float(r["c"]) / tau, tau)
           for r in doc["reapers"]]
    eps = float(doc.get("epsilon", 0.05))
    return fam, eps


@dataclass(frozen=True)
class IntersectionResult:
    s0: float
    s1: float
    point: np.ndarray


def _crossing_equation(r1, r2):
    """1-D crossing equation phi(x) = cos(tau(x-b2)) - e^{tau(c2-c1)} cos(tau(x-b1))."""
    tau = r1.tau
    scale = math.exp(tau * (r2.c - r1.c))

    def phi(x):
        return np.cos(tau * (x - r2.b)) - scale * np.cos(tau * (x - r1.b))

    return phi


def intersect_reapers(r1: GrimReaperCurve, r2: GrimReaperCurve,
                      det_threshold: float = 1e-8) -> IntersectionResult:
    """Unique transversal intersection of two equal-tau reapers.

    Newton solve of the center map F(s0, s1) = (b, c), seeded by
    bisection on the 1-D crossing equation.
    """
    if abs(r1.tau - r2.tau) > 1e-14 * max(r1.tau, r2.tau):
        raise ValueError("intersect_reapers requires equal tau")
    tau = r1.tau
    if abs(r1.b - r2.b) <= 1e-14:
        raise NoIntersection("vertical translates of one curve never meet")
    if abs(r1.b - r2.b) >= np.pi / tau:
        raise NoIntersection("domains are disjoint")

    lo = max(r1.domain[0], r2.domain[0])
    hi = min(r1.domain[1], r2.domain[1])
    phi = _crossing_equation(r1, r2)
    pad = 1e-12 * (hi - lo) + 1e-300
    a, b = lo + pad, hi - pad
    # single-crossing sign analysis: the bracket must change sign exactly once
    xs = np.linspace(a, b, 257)
    signs = np.sign(phi(xs))
    nz = signs[signs != 0]
    changes = int(np.count_nonzero(np.diff(nz)))
    if changes == 0:
        raise NoIntersection("crossing equation has no sign change on the overlap")
    if changes > 1:
        raise Degenerate("multiple crossings detected by sign analysis")
    x0 = brentq(phi, a, b, xtol=1e-14, rtol=1e-15)

    s0 = float(r1.s_of_x(x0))
    s1 = float(r2.s_of_x(x0))
    # Newton polish on G(s0, s1) = p1(s0) - p2(s1)
    for _ in range(60):
        g = r1.point(s0) - r2.point(s1)
        if np.linalg.norm(g) <= 1e-13 * (1.0 + abs(s0) + abs(s1)):
            break
        J = np.column_stack([r1.tangent(s0), -r2.tangent(s1)])
        det = np.linalg.det(J)
        if abs(det) < det_threshold:
            raise Degenerate("near-tangential intersection: |det DF| below threshold")
        ds = np.linalg.solve(J, -g)
        step = float(np.max(np.abs(ds)))
        if step > 10.0 / tau:
            ds *= (10.0 / tau) / step
        s0 += ds[0]
        s1 += ds[1]
    g = r1.point(s0) - r2.point(s1)
    if np.linalg.norm(g) > 1e-10:
        raise Degenerate("Newton failed to reach 1e-10 residual")
    t0, t1 = tau * s0, tau * s1
    det_df = abs(math.sinh(t1) - math.sinh(t0)) / (math.cosh(t0) * math.cosh(t1))
    if det_df < det_threshold:
        raise Degenerate("|det DF| below threshold")
    point = 0.5 * (r1.point(s0) + r2.point(s1))
    return IntersectionResult(float(s0), float(s1), point)


@dataclass
class PositionReport:
    delta: float
    delta_Gamma: float
    epsilon: float
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def _crossing_angles(r1, r2, s0, s1):
    """(smallest angle between tangent lines, smallest tangent-to-e_y angle)."""
    t0 = r1.tangent(s0)
    t1 = r2.tangent(s1)
    dot = abs(float(np.dot(t0, t1)))
    cross = min(math.pi / 2.0, math.acos(min(1.0, dot)))
    def ey_angle(t):
        return math.acos(min(1.0, abs(float(t[1]))))
    return cross, min(ey_angle(t0), ey_angle(t1))


def validate_general_position(family, epsilon: float = 0.05,
                              raise_on_violation: bool = True) -> PositionReport:
    """Check general position of the family and measure the admissible margins.

    Returns delta (min arclength gap between intersections on a curve) and the
    largest delta_Gamma for which all crossing/tangent angle clauses hold with
    the factor 30.
    """
    if not family:
        raise ValueError("empty family")
    tau = family[0].tau
    if any(abs(r.tau - tau) > 1e-14 * tau for r in family):
        raise ValueError("family must share a common tau")

    violations = []
    # (i) asymptote separation in unscaled units
    for n in range(len(family)):
        for m in range(n + 1, len(family)):
            diff = tau * (family[n].b - family[m].b)
            k = round(diff / math.pi)
            if abs(diff - k * math.pi) <= epsilon:
                violations.append(("asymptote", n, m, k))

    # pairwise intersections
    points, pairs = [], []
    per_curve_s = {n: [] for n in range(len(family))}
    for n in range(len(family)):
        for m in range(n + 1, len(family)):
            try:
                res = intersect_reapers(family[n], family[m])
            except NoIntersection:
                continue
            except Degenerate:
                violations.append(("degenerate", n, m))
                continue
            points.append(res.point)
            pairs.append((n, m, res))
            per_curve_s[n].append(res.s0)
            per_curve_s[m].append(res.s1)

    # (ii) no triple concurrency
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if np.linalg.norm(points[i] - points[j]) <= TRIPLE_TOL:
                trip = sorted(set(pairs[i][:2]) | set(pairs[j][:2]))
                violations.append(("triple", tuple(trip)))

    delta = math.inf
    for s_list in per_curve_s.values():
        if len(s_list) >= 2:
            s_sorted = sorted(s_list)
            delta = min(delta, min(b - a for a, b in zip(s_sorted, s_sorted[1:])))

    min_cross, max_cross, min_ey = math.inf, 0.0, math.inf
    for n, m, res in pairs:
        cross, ey = _crossing_angles(family[n], family[m], res.s0, res.s1)
        min_cross = min(min_cross, cross)
        max_cross = max(max_cross, cross)
        min_ey = min(min_ey, ey)
    if pairs:
        delta_Gamma = min(min_cross, math.pi / 2.0 - max_cross, min_ey) / 30.0
        if delta_Gamma <= 0:
            violations.append(("angle", min_cross, max_cross, min_ey))
    else:
        delta_Gamma = math.inf

    report = PositionReport(delta, delta_Gamma, epsilon, violations)
    if violations and raise_on_violation:
        raise Violation(f"general position violated: {violations}", violations)
    return report


# ---------------------------------------------------------------------------
# intersection graph


def tetrad_from_tangent_angles(alpha_pairs):
    """Order directing angles counterclockwise with beta_1 first clockwise from e_y.

    alpha_pairs: list of (angle, meta) for the four directing vectors.
    Returns (beta array ascending from beta_1, metas in the same order).
    """
    entries = []
    for ang, meta in alpha_pairs:
        # normalize to (pi/2 - 2 pi, pi/2]
        a = wrap_angle(ang - math.pi / 2.0) + math.pi / 2.0 - 2.0 * math.pi
        if a <= math.pi / 2.0 - 2.0 * math.pi:
            a += 2.0 * math.pi
        entries.append((a, meta))
    entries.sort(key=lambda e: e[0])
    beta1, meta1 = entries[-1]
    rest = entries[:-1]
    beta = [beta1] + [a + 2.0 * math.pi for a, _ in rest]
    metas = [meta1] + [m for _, m in rest]
    return np.array(beta), metas


@dataclass
class GraphVertex:
    point: np.ndarray
    curves: tuple          # (n, m) reaper ids
    params: tuple          # (s0, s1) on those curves
    beta: np.ndarray       # tetrad angles beta_1..beta_4
    directions: list       # per beta index: (curve id, sign) with sign=+1 along +s


@dataclass
class GraphEdge:
    vertices: tuple
    curve: int
    s_range: tuple


@dataclass
class GraphRay:
    vertex: int
    curve: int
    direction: int         # +1 rightward (s increasing), -1 leftward


@dataclass
class IntersectionGraph:
    family: list
    vertices: list
    edges: list
    rays: list

    @property
    def left_rays(self):
        return [r for r in self.rays if r.direction < 0]


def _vertex_tetrad(family, n, m, res):
    a_n = math.atan2(*(family[n].tangent(res.s0)[::-1]))
    a_m = math.atan2(*(family[m].tangent(res.s1)[::-1]))
    pairs = [(a_n, (n, +1)), (a_m, (m, +1)),
             (a_n + math.pi, (n, -1)), (a_m + math.pi, (m, -1))]
    return tetrad_from_tangent_angles(pairs)


def build_graph(family) -> IntersectionGraph:
    """Vertices (sweep-ordered), tetrads, edges, and rays of the graph G."""
    validate_general_position(family)
    raw = []
    for n in range(len(family)):
        for m in range(n + 1, len(family)):
            try:
                res = intersect_reapers(family[n], family[m])
            except NoIntersection:
                continue
            raw.append((n, m, res))

    def sweep_key(entry):
        _, _, res = entry
        return (res.point[0], -res.point[1])

    raw.sort(key=sweep_key)
    # tie-break: same abscissa within tolerance -> higher ordinate first
    for i in range(len(raw) - 1):
        if abs(raw[i][2].point[0] - raw[i + 1][2].point[0]) <= SWEEP_X_TOL:
            if raw[i][2].point[1] < raw[i + 1][2].point[1]:
                raw[i], raw[i + 1] = raw[i + 1], raw[i]

    vertices = []
    per_curve = {n: [] for n in range(len(family))}
    for k, (n, m, res) in enumerate(raw):
        beta, dirs = _vertex_tetrad(family, n, m, res)
        vertices.append(GraphVertex(res.point, (n, m), (res.s0, res.s1), beta, dirs))
        per_curve[n].append((res.s0, k))
        per_curve[m].append((res.s1, k))

    edges, rays = [], []
    for n, hits in per_curve.items():
        if not hits:
            continue
        hits.sort()
        rays.append(GraphRay(hits[0][1], n, -1))
        rays.append(GraphRay(hits[-1][1], n, +1))
        for (sa, ka), (sb, kb) in zip(hits, hits[1:]):
            edges.append(GraphEdge((ka, kb), n, (sa, sb)))
    return IntersectionGraph(list(family), vertices, edges, rays)
