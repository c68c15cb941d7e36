"""Lagrangian charts around a reference trajectory and the reduced system.

The extension field is ``V_t(x) = chi(|x - x_*(t)| / R) x_*'(t)`` in the
base chart, with ``chi`` equal to one on ``[0, 1/2]`` and zero past one.
On the plateau the flow of ``V`` is a pure translation, so the chart
``psi_t`` maps ``x`` to ``x - (x_*(t) - x_*(0))`` there and the reduced
field is the original field at the translated point minus the reference
velocity.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import kernels
from .dynamics import ControlSystemDef, integrate, merge_knots
from .errors import OutOfDomain, TubeEscape
from .geometry import Euclidean, ManifoldPoint

PLATEAU = 0.5


def cutoff(s):
    """Quintic smoothstep falling from 1 at ``s <= 1/2`` to 0 at ``s >= 1``."""
    p = np.clip((np.asarray(s, float) - PLATEAU) / (1.0 - PLATEAU), 0.0, 1.0)
    return 1.0 - p ** 3 * (10.0 - 15.0 * p + 6.0 * p ** 2)


def cutoff_derivative(s):
    p = np.clip((np.asarray(s, float) - PLATEAU) / (1.0 - PLATEAU), 0.0, 1.0)
    return -30.0 * p ** 2 * (1.0 - p) ** 2 / (1.0 - PLATEAU)


class LagrangianChart:
    """Chart ``psi_t`` transported along a reference trajectory."""

    def __init__(self, reference, base_chart, radius):
        self.reference = reference
        self.manifold = reference.manifold
        self.base_chart = base_chart
        self.radius = float(radius)
        self.x_ref0 = self._coords(reference.pieces[0], reference.t0)
        self.knots = merge_knots([p.a for p in reference.pieces], [p.b for p in reference.pieces])

    def __repr__(self):
        return f"LagrangianChart(base={self.base_chart!r}, radius={self.radius:.4g})"

    @property
    def tube_radius(self):
        return PLATEAU * self.radius

    def piece_for(self, a, b=None):
        mid = a if b is None else 0.5 * (a + b)
        return self.reference._piece(mid)

    def _coords(self, piece, t):
        x = piece.dense(t)[0]
        if piece.chart == self.base_chart:
            return x
        return self.manifold.transition(piece.chart, self.base_chart, x)

    def x_star(self, t, piece=None):
        return self._coords(piece or self.piece_for(t), t)

    def x_star_dot(self, t, piece=None):
        p = piece or self.piece_for(t)
        x = p.dense(t)[0]
        v = np.asarray(p.fun(t, p.chart, x), float)
        if p.chart == self.base_chart:
            return v
        return self.manifold.transition_jacobian(p.chart, self.base_chart, x) @ v

    def shift(self, t, piece=None):
        return self.x_star(t, piece) - self.x_ref0

    def extension_field(self, t, x, piece=None):
        p = piece or self.piece_for(t)
        s = np.linalg.norm(np.asarray(x, float) - self.x_star(t, p)) / self.radius
        return float(cutoff(s)) * self.x_star_dot(t, p)

    def _flow(self, x, t_from, t_to, tol):
        # flow of the extension field, honoring the reference knots
        inner = self.knots[(self.knots > min(t_from, t_to)) & (self.knots < max(t_from, t_to))]
        stops = np.concatenate([[t_from], inner[::-1] if t_to < t_from else inner, [t_to]])
        y = np.array(x, float)
        for a, b in zip(stops[:-1], stops[1:]):
            p = self.piece_for(a, b)
            _, ys, _, _, _ = kernels.dopri5(
                lambda t, z: self.extension_field(t, z, p), a, b, y, tol, tol, None, 100000, None)
            y = ys[-1]
        return y

    def psi(self, t, x, tol=1e-12):
        """Chart ``psi_t`` applied to base-chart coordinates ``x``."""
        x = np.asarray(x, float)
        d = np.linalg.norm(x - self.x_star(t)) / self.radius
        if d <= PLATEAU:
            return x - self.shift(t)
        return self._flow(x, t, self.reference.t0, tol)

    def psi_inv(self, t, y, tol=1e-12):
        y = np.asarray(y, float)
        if np.linalg.norm(y - self.x_ref0) / self.radius <= PLATEAU:
            return y + self.shift(t)
        return self._flow(y, self.reference.t0, t, tol)


def build_lagrangian_chart(system, reference, base_chart=None, radius=None):
    """Lagrangian chart around ``reference`` in ``base_chart``.

    The default radius is twice the largest excursion of the reference from
    its starting coordinates, and at least one.
    """
    m = reference.manifold
    base_chart = base_chart or reference.pieces[0].chart
    times = reference.sample_times(3)
    pts = []
    for t in times:
        c, x = reference.coords_at(t)
        y = x if c == base_chart else m.transition(c, base_chart, x)
        if not np.all(np.isfinite(y)) or not m.in_domain(base_chart, y):
            raise TubeEscape(f"reference leaves chart {base_chart!r} at t={t:.6g}")
        pts.append(y)
    pts = np.array(pts)
    if radius is None:
        dev = float(np.max(np.linalg.norm(pts - pts[0], axis=1)))
        radius = max(2.0 * dev, 1.0)
    return LagrangianChart(reference, base_chart, radius)


class ReducedSystem:
    """Reduced field ``g`` on the fixed chart image of the tube."""

    def __init__(self, system, lchart):
        self.original = system
        self.lchart = lchart
        n = system.manifold.dim
        self.manifold = Euclidean(n)
        self._bounds = None
        self.system = ControlSystemDef(
            manifold=self.manifold,
            field=lambda t, c, x, u: self.g(t, x, u),
            field_x=lambda t, c, x, u: self.g_x(t, x, u),
            control_set=system.control_set,
            horizon=system.horizon,
            control_affine=system.control_affine,
            name=f"reduced {system.name}",
            knots=tuple(merge_knots(lchart.knots, system.knots)),
            binder=self._bind,
        )

    def __repr__(self):
        return f"ReducedSystem({self.original.name!r}, {self.lchart!r})"

    def _bind(self, a, b):
        lc = self.lchart
        p = lc.piece_for(a, b)
        f, fx = self.original.bound(a, b)
        base = lc.base_chart

        def g(t, c, x, u):
            return np.asarray(f(t, base, x + lc.shift(t, p), u), float) - lc.x_star_dot(t, p)

        def g_x(t, c, x, u):
            return np.asarray(fx(t, base, x + lc.shift(t, p), u), float)

        return g, g_x

    def g(self, t, x, u):
        lc = self.lchart
        p = lc.piece_for(t)
        y = np.asarray(x, float) + lc.shift(t, p)
        return np.asarray(self.original.field(t, lc.base_chart, y, u), float) - lc.x_star_dot(t, p)

    def g_x(self, t, x, u):
        lc = self.lchart
        y = np.asarray(x, float) + lc.shift(t)
        return np.asarray(self.original.field_x(t, lc.base_chart, y, u), float)

    @property
    def x_ref0(self):
        return self.lchart.x_ref0

    @property
    def tube_radius(self):
        return self.lchart.tube_radius

    @property
    def horizon(self):
        return self.original.horizon

    @property
    def bounds(self):
        if self._bounds is None:
            self._bounds = certify_bounds(self)
        return self._bounds

    def to_reduced(self, t, q):
        """``psi_t`` of a manifold point."""
        base = self.lchart.base_chart
        x = q.coords if q.chart == base else q.manifold.transition(q.chart, base, q.coords)
        if not q.manifold.in_domain(base, x):
            raise OutOfDomain(f"point outside base chart {base!r}")
        return self.lchart.psi(t, x)

    def from_reduced(self, t, x):
        return ManifoldPoint(self.original.manifold, self.lchart.base_chart, self.lchart.psi_inv(t, x))

    def point(self, x):
        return self.manifold.point(x, "id")

    def tube_margin(self, traj):
        """Distance from the tube boundary along a reduced trajectory (negative outside)."""
        xs = np.concatenate([p.ys for p in traj.pieces])
        return self.tube_radius - float(np.max(np.linalg.norm(xs - self.x_ref0, axis=1)))

    def integrate(self, x0, u, tol=1e-9, check_tube=True):
        traj = integrate(self.system, self.point(x0), u, tol)
        if check_tube and self.tube_margin(traj) < 0:
            raise TubeEscape(f"reduced trajectory leaves the tube of radius {self.tube_radius:.4g}")
        return traj


def reduce(system, lchart):
    return ReducedSystem(system, lchart)


@dataclass(frozen=True)
class BoundCertificate:
    """Sampled envelopes of the reduced field (estimates, not proofs)."""

    times: np.ndarray
    m: np.ndarray
    k: np.ndarray
    m_l1: float
    k_l1: float
    c0: float
    sample_count: int
    tube_radius: float

    @property
    def c3(self):
        return (0.5 * self.k_l1 * self.c0 ** 2 + self.c0 * self.k_l1) * np.exp(self.m_l1)

    def summary(self):
        return (f"sampled bounds ({self.sample_count} samples, tube radius {self.tube_radius:.6g}): "
                f"|m|_L1={self.m_l1:.6g} |k|_L1={self.k_l1:.6g} c0={self.c0:.6g}")


def ball_samples(dim, n, radius, center, seed=0):
    """``n`` scrambled low-discrepancy points in a closed ball; prefixes nest."""
    gen = qmc.Halton(dim, scramble=True, seed=seed)
    out = [np.zeros(dim)]
    while len(out) < n:
        cand = 2.0 * gen.random(max(2 * n, 16)) - 1.0
        out.extend(cand[np.linalg.norm(cand, axis=1) <= 1.0])
    return center + radius * np.asarray(out[:n])


def certify_bounds(rs, samples=256, time_nodes=32, seed=0):
    """Monte-Carlo envelopes ``m_g(t)``, ``k_g(t)`` over the tube and control set.

    ``m`` bounds both ``|g|`` and the operator norm of ``g_x``; ``k`` is the
    largest difference quotient over consecutive sample pairs. The Gronwall
    constant is ``c0 = (1 + 2 |m|_L1) exp(|k|_L1)``.
    """
    T = rs.horizon
    edges = np.linspace(0.0, T, time_nodes + 1)
    times = 0.5 * (edges[1:] + edges[:-1])
    xs = ball_samples(rs.manifold.dim, samples, rs.tube_radius, rs.x_ref0, seed)
    us = rs.original.control_set.samples(max(samples, 1), seed)
    m = np.zeros(time_nodes)
    k = np.zeros(time_nodes)
    for i, t in enumerate(times):
        prev = None
        for j, x in enumerate(xs):
            u = us[j % len(us)]
            gv = rs.g(t, x, u)
            gx = rs.g_x(t, x, u)
            m[i] = max(m[i], np.linalg.norm(gv), np.linalg.norm(gx, 2) if gx.size else 0.0)
            if prev is not None:
                px, pu = prev
                dx = np.linalg.norm(x - px)
                if dx > 0:
                    k[i] = max(k[i], np.linalg.norm(gv - rs.g(t, px, u)) / dx)
            prev = (x, u)
    dt = np.diff(edges)
    m_l1 = float(m @ dt)
    k_l1 = float(k @ dt)
    return BoundCertificate(times, m, k, m_l1, k_l1, (1 + 2 * m_l1) * np.exp(k_l1),
                            samples, rs.tube_radius)
