"""Control systems in chart coordinates, piecewise-constant controls and flows.

Field evaluators use the signature ``field(t, chart, x, u)`` and return the
chart-coordinate components of ``f(t, q, u)``; ``field_x`` returns the
state-derivative matrix in the same chart.
"""

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.stats import qmc

from . import kernels
from .errors import BlowUp, BudgetExceeded, NonFiniteState
from .geometry import ManifoldPoint, TangentVector

DEFAULT_TOL = 1e-9
SWITCH_FRACTION = 0.9
KNOT_TOL = 1e-13


def fmt(v):
    return f"{float(v):.17g}"


# control sets ---------------------------------------------------------------


class ControlSet:
    """Finite list, box ``[a, b]^m`` or closed ball of controls."""

    def __init__(self, kind, points=None, lower=None, upper=None, radius=None, dim=None):
        self.kind = kind
        if kind == "finite":
            self.points = np.atleast_2d(np.asarray(points, float))
            if self.points.shape[0] == 1 and np.ndim(points) == 1 and len(points) > 1:
                # a flat list means scalar controls
                self.points = self.points.T
            self.dim = self.points.shape[1]
        elif kind == "box":
            self.lower = np.atleast_1d(np.asarray(lower, float))
            self.upper = np.atleast_1d(np.asarray(upper, float))
            if np.any(self.upper < self.lower):
                raise ValueError("box with upper < lower")
            self.dim = self.lower.size
        elif kind == "ball":
            self.radius = float(radius)
            self.dim = int(dim)
        else:
            raise ValueError(f"unknown control set kind {kind!r}")

    @classmethod
    def finite(cls, points):
        return cls("finite", points=points)

    @classmethod
    def box(cls, lower, upper):
        return cls("box", lower=lower, upper=upper)

    @classmethod
    def ball(cls, dim, radius=1.0):
        return cls("ball", radius=radius, dim=dim)

    def __repr__(self):
        if self.kind == "finite":
            return f"ControlSet.finite({self.points.tolist()})"
        if self.kind == "box":
            return f"ControlSet.box({self.lower.tolist()}, {self.upper.tolist()})"
        return f"ControlSet.ball({self.dim}, {self.radius})"

    @property
    def convex(self):
        return self.kind != "finite" or len(self.points) == 1

    def contains(self, u, tol=1e-12):
        u = np.atleast_1d(np.asarray(u, float))
        if u.size != self.dim:
            return False
        if self.kind == "finite":
            return bool(np.min(np.max(np.abs(self.points - u), axis=1)) <= tol)
        if self.kind == "box":
            return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))
        return bool(np.linalg.norm(u) <= self.radius + tol)

    def vertices(self):
        if self.kind == "finite":
            return self.points.copy()
        if self.kind == "box":
            corners = np.array(np.meshgrid(*zip(self.lower, self.upper), indexing="ij"))
            return corners.reshape(self.dim, -1).T
        eye = np.eye(self.dim) * self.radius
        return np.vstack([eye, -eye])

    def samples(self, n, seed=0):
        """Deterministic samples; a longer request extends a shorter one."""
        if self.kind == "finite":
            return self.points.copy()
        head = self.vertices()
        if n <= len(head):
            return head[:max(n, 1)]
        extra = n - len(head)
        if self.kind == "box":
            pts = qmc.Halton(self.dim, scramble=True, seed=seed).random(extra)
            return np.vstack([head, self.lower + pts * (self.upper - self.lower)])
        # ball: filter cube points, which keeps prefixes nested
        gen = qmc.Halton(self.dim, scramble=True, seed=seed)
        out = []
        while len(out) < extra:
            cand = 2.0 * gen.random(max(2 * extra, 16)) - 1.0
            out.extend(cand[np.linalg.norm(cand, axis=1) <= 1.0])
        return np.vstack([head, self.radius * np.asarray(out[:extra])])

    def argmax_linear(self, c):
        """A maximizer of ``c . u`` over the set."""
        c = np.atleast_1d(np.asarray(c, float))
        if self.kind == "finite":
            return self.points[int(np.argmax(self.points @ c))].copy()
        if self.kind == "box":
            return np.where(c >= 0, self.upper, self.lower)
        nrm = np.linalg.norm(c)
        if nrm == 0:
            return np.zeros(self.dim)
        return self.radius * c / nrm

    def max_linear(self, c):
        c = np.atleast_1d(np.asarray(c, float))
        if self.kind == "ball":
            return self.radius * float(np.linalg.norm(c))
        return float(c @ self.argmax_linear(c))

    def to_dict(self):
        if self.kind == "finite":
            return {"kind": "finite", "points": self.points.tolist()}
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "ball", "dim": self.dim, "radius": self.radius}


# systems --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlSystemDef:
    """``q' = f(t, q, u)`` on a charted manifold over ``[0, horizon]``.

    ``knots`` lists times where the field itself may jump in ``t``;
    ``binder(a, b)``, when given, returns the ``(field, field_x)`` pair valid
    on ``[a, b]`` so that values at interval ends use the interior branch.
    """

    manifold: object
    field: object
    field_x: object
    control_set: ControlSet
    horizon: float
    control_affine: bool = False
    name: str = "system"
    knots: tuple = ()
    binder: object = dc_field(default=None, repr=False)

    def bound(self, a, b):
        if self.binder is None:
            return self.field, self.field_x
        return self.binder(a, b)

    def vector(self, t, q, u):
        comps = self.field(t, q.chart, q.coords, np.atleast_1d(u))
        return TangentVector(q, comps)

    def affine_parts(self, t, chart, x):
        """Drift and input matrix of a control-affine field."""
        f0 = np.asarray(self.field(t, chart, x, np.zeros(self.control_set.dim)), float)
        cols = [np.asarray(self.field(t, chart, x, e), float) - f0
                for e in np.eye(self.control_set.dim)]
        return f0, np.column_stack(cols)


def field_x_error(system, rng, samples=20, step=1e-6):
    """Worst relative gap between ``field_x`` and central differences of ``field``."""
    worst = 0.0
    cset = system.control_set.samples(8)
    for _ in range(samples):
        p = system.manifold.sample_point(rng)
        t = rng.uniform(0, system.horizon)
        u = cset[rng.integers(len(cset))]
        x = p.coords
        n = x.size
        fd = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            fd[:, j] = (np.asarray(system.field(t, p.chart, x + e, u))
                        - np.asarray(system.field(t, p.chart, x - e, u))) / (2 * step)
        jac = np.asarray(system.field_x(t, p.chart, x, u))
        worst = max(worst, np.linalg.norm(jac - fd) / max(np.linalg.norm(fd), 1.0))
    return worst


# controls -------------------------------------------------------------------


class Control:
    """Piecewise-constant, right-open control on a knot grid."""

    def __init__(self, grid, values):
        self.grid = np.asarray(grid, float)
        vals = np.asarray(values, float)
        if vals.ndim == 1:
            vals = vals[:, None]
        self.values = vals
        if self.grid.ndim != 1 or self.grid.size < 2 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("control grid must be strictly increasing with at least two knots")
        if len(self.values) != self.grid.size - 1:
            raise ValueError("need one control value per grid interval")
        self.grid.setflags(write=False)
        self.values.setflags(write=False)

    @classmethod
    def constant(cls, value, horizon, pieces=1):
        value = np.atleast_1d(np.asarray(value, float))
        return cls(np.linspace(0.0, horizon, pieces + 1), np.tile(value, (pieces, 1)))

    def __repr__(self):
        return f"Control(intervals={len(self.values)}, dim={self.dim})"

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return float(self.grid[-1])

    def index(self, t):
        k = int(np.searchsorted(self.grid, t, side="right")) - 1
        return min(max(k, 0), len(self.values) - 1)

    def __call__(self, t):
        return self.values[self.index(t)]

    def value_on(self, a, b):
        return self.values[self.index(0.5 * (a + b))]

    def interval_field(self, system, a, b):
        f, fx = system.bound(a, b)
        u = self.value_on(a, b)
        return (lambda t, c, x: f(t, c, x, u)), (lambda t, c, x: fx(t, c, x, u))

    def check(self, control_set, tol=1e-12):
        bad = [k for k, v in enumerate(self.values) if not control_set.contains(v, tol)]
        if bad:
            raise ValueError(f"control value on interval {bad[0]} lies outside the control set")
        return self

    def on_grid(self, grid):
        """Same control sampled on a finer grid containing the original knots."""
        grid = np.asarray(grid, float)
        mids = 0.5 * (grid[1:] + grid[:-1])
        return Control(grid, np.array([self(m) for m in mids]))

    def to_rows(self):
        return [(self.grid[k], self.grid[k + 1], self.values[k]) for k in range(len(self.values))]


def merge_knots(*grids, lo=None, hi=None):
    pts = np.unique(np.concatenate([np.asarray(g, float).ravel() for g in grids if len(g)]))
    if lo is not None:
        pts = pts[pts >= lo - KNOT_TOL]
        pts = np.unique(np.concatenate([[lo], pts[pts > lo + KNOT_TOL]]))
    if hi is not None:
        pts = pts[pts <= hi + KNOT_TOL]
        pts = np.concatenate([pts[pts < hi - KNOT_TOL], [hi]])
    keep = np.concatenate([[True], np.diff(pts) > KNOT_TOL])
    out = pts[keep]
    if hi is not None:
        out[-1] = hi
    return out


# trajectories ---------------------------------------------------------------


@dataclass(eq=False)
class Piece:
    """One integrator run: a single chart and a single control interval."""

    a: float
    b: float
    chart: str
    ts: np.ndarray
    ys: np.ndarray
    ks: np.ndarray
    fun: object = dc_field(default=None, repr=False)
    jac: object = dc_field(default=None, repr=False)

    def dense(self, t):
        return kernels.dense_eval(self.ts, self.ys, self.ks, t)

    def covers(self, t):
        lo, hi = min(self.a, self.b), max(self.a, self.b)
        return lo - KNOT_TOL <= t <= hi + KNOT_TOL


class Path:
    """Piecewise dense-output solution in chart coordinates."""

    def __init__(self, manifold, pieces, tol):
        self.manifold = manifold
        self.pieces = list(pieces)
        self.tol = tol

    def _piece(self, t):
        for p in self.pieces:
            if p.covers(t):
                return p
        raise ValueError(f"time {t} outside the solution span")

    def coords_at(self, t):
        p = self._piece(t)
        return p.chart, p.dense(t)[0]

    @property
    def grid(self):
        return np.concatenate([p.ts for p in self.pieces])

    def knot_values(self):
        """``(t, chart, coords)`` rows, dropping repeated knots in the same chart."""
        rows = []
        for p in self.pieces:
            for t, y in zip(p.ts, p.ys):
                if rows and rows[-1][0] == t and rows[-1][1] == p.chart:
                    continue
                rows.append((t, p.chart, y))
        return rows

    def to_csv(self, fh=None, prefix="x"):
        rows = sorted(self.knot_values(), key=lambda r: r[0])
        n = len(rows[0][2])
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "chart"] + [f"{prefix}{i + 1}" for i in range(n)])
        for t, chart, y in rows:
            w.writerow([fmt(t), chart] + [fmt(v) for v in y])
        return out.getvalue() if fh is None else None


class Trajectory(Path):
    """State trajectory; keeps the bound fields so that linearizations reuse them."""

    def __init__(self, system, control, pieces, tol):
        super().__init__(system.manifold, pieces, tol)
        self.system = system
        self.control = control

    def __repr__(self):
        return f"Trajectory(pieces={len(self.pieces)}, end={self.end.coords})"

    @property
    def t0(self):
        return float(self.pieces[0].a)

    @property
    def t1(self):
        return float(self.pieces[-1].b)

    @property
    def states(self):
        return [ManifoldPoint(self.manifold, c, y) for _, c, y in self.knot_values()]

    @property
    def start(self):
        p = self.pieces[0]
        return ManifoldPoint(self.manifold, p.chart, p.ys[0])

    @property
    def end(self):
        p = self.pieces[-1]
        return ManifoldPoint(self.manifold, p.chart, p.ys[-1])

    def at(self, t):
        chart, x = self.coords_at(t)
        return ManifoldPoint(self.manifold, chart, x)

    def coords_in(self, chart, ts):
        """Coordinates in a fixed chart at times ``ts`` (rows)."""
        out = []
        for t in np.atleast_1d(ts):
            c, x = self.coords_at(t)
            out.append(x if c == chart else self.manifold.transition(c, chart, x))
        return np.array(out)

    def velocity(self, t, piece=None):
        p = piece or self._piece(t)
        x = p.dense(t)[0]
        return p.chart, x, np.asarray(p.fun(t, p.chart, x), float)

    def sample_times(self, per_step=2):
        """Knots plus interior points of every accepted step."""
        out = []
        for p in self.pieces:
            ts = p.ts
            out.append(ts)
            for j in range(1, per_step):
                out.append(ts[:-1] + (ts[1:] - ts[:-1]) * j / per_step)
        return np.unique(np.concatenate(out))


def _raise_status(status, t):
    if status == kernels.NONFINITE:
        raise NonFiniteState(f"non-finite state near t={t:.6g}")
    if status == kernels.STEP_UNDERFLOW:
        raise BlowUp(f"step size underflow near t={t:.6g}")
    if status == kernels.MAX_STEPS:
        raise BudgetExceeded(f"integrator step budget exhausted near t={t:.6g}")


def _switch_test(manifold, chart):
    if all(not np.isfinite(r) for r in manifold.radii.values()):
        return None

    def stop(t, y):
        if not np.all(np.isfinite(y)):
            return False
        if not manifold.in_domain(chart, y):
            return True
        if manifold.domain_fraction(chart, y) <= SWITCH_FRACTION:
            return False
        best = manifold.best_chart(chart, y)
        return best is not None and best != chart

    return stop


def integrate_bound(system, x0, chart, bounded, breaks, tol=DEFAULT_TOL, control=None,
                    max_steps=200000):
    """Integrate piecewise over ``breaks`` with ``bounded(a, b) -> (fun, jac)``."""
    m = system.manifold
    x = np.array(x0, float)
    pieces = []
    h = None
    for a, b in zip(breaks[:-1], breaks[1:]):
        fun, jac = bounded(a, b)
        t = a
        while True:
            rhs = (lambda c: (lambda tt, yy: fun(tt, c, yy)))(chart)
            ts, ys, ks, h, status = kernels.dopri5(
                rhs, t, b, x, tol, tol, h, max_steps, _switch_test(m, chart))
            _raise_status(status, ts[-1])
            if len(ts) > 1:
                pieces.append(Piece(t, ts[-1], chart, ts, ys, ks, fun, jac))
            t, x = float(ts[-1]), ys[-1].copy()
            if status != kernels.STOPPED:
                break
            new = m.best_chart(chart, x)
            if new is None:
                raise BlowUp(f"coordinates left chart {chart!r} with no overlapping chart at t={t:.6g}")
            if new != chart:
                x = m.transition(chart, new, x)
                chart = new
            if t >= b:
                break
    if not pieces:
        raise ValueError("empty integration span")
    return Trajectory(system, control, pieces, tol)


def integrate(system, q0, u, tol=DEFAULT_TOL, t_span=None):
    """Flow of ``system`` from ``q0`` under ``u`` (a Control or relaxed control).

    Control knots are forced breakpoints; the chart changes automatically when
    the state nears the edge of its domain and another chart holds it better.
    """
    lo, hi = t_span if t_span is not None else (0.0, system.horizon)
    breaks = merge_knots(u.grid, system.knots, [lo, hi], lo=lo, hi=hi)
    if not system.manifold.in_domain(q0.chart, q0.coords):
        raise BlowUp(f"initial point outside chart {q0.chart!r}")
    return integrate_bound(system, q0.coords, q0.chart,
                           lambda a, b: u.interval_field(system, a, b), breaks, tol, control=u)


# linear sweeps along a trajectory ---------------------------------------------


def sweep(traj, z0, make_rhs, on_switch, backward=False, tol=None):
    """Solve a linear ODE along ``traj``, piece by piece.

    ``make_rhs(piece)`` returns ``fun(t, z)``; ``on_switch(prev, nxt, z)``
    maps ``z`` across a chart change between consecutive pieces (in sweep
    order). Returns one solved piece per trajectory piece, in time order.
    """
    tol = traj.tol if tol is None else tol
    order = traj.pieces[::-1] if backward else traj.pieces
    z = np.array(z0, float).ravel()
    out = []
    prev = None
    h = None
    for p in order:
        if prev is not None and prev.chart != p.chart:
            z = on_switch(prev, p, z)
        t0, t1 = (p.b, p.a) if backward else (p.a, p.b)
        ts, zs, ks, h, status = kernels.dopri5(make_rhs(p), t0, t1, z, tol, tol, h, 200000, None)
        _raise_status(status, ts[-1])
        out.append(Piece(p.a, p.b, p.chart, ts, zs, ks))
        z = zs[-1].copy()
        prev = p
    return out[::-1] if backward else out


class TangentTrajectory(Path):
    """``Q_{0,t*} v0`` along a base trajectory."""

    def __init__(self, base, pieces):
        super().__init__(base.manifold, pieces, base.tol)
        self.base = base

    def at(self, t):
        chart, v = self.coords_at(t)
        q = self.base.at(t)
        if q.chart != chart:
            q = q.moved(chart)
        return TangentVector(q, v)

    @property
    def end(self):
        p = self.pieces[-1]
        return TangentVector(self.base.end, p.ys[-1])


def variational_flow(system, traj, v0, tol=None):
    """Solve ``v' = f_x(t, x(t), u(t)) v`` along ``traj`` from ``v0``.

    ``v0`` may be a TangentVector or an ``(n, k)`` matrix of columns (then
    the sweep carries all columns at once and the result holds them
    flattened row-major).
    """
    n = traj.manifold.dim
    if isinstance(v0, TangentVector):
        comps = v0.components
        if v0.base.chart != traj.pieces[0].chart:
            J = traj.manifold.transition_jacobian(v0.base.chart, traj.pieces[0].chart, v0.base.coords)
            comps = J @ comps
        z0, k = comps, 1
    else:
        z0 = np.asarray(v0, float)
        k = z0.shape[1] if z0.ndim == 2 else 1

    def make_rhs(p):
        def rhs(t, z):
            x = p.dense(t)[0]
            return (np.asarray(p.jac(t, p.chart, x), float) @ z.reshape(n, k)).ravel()
        return rhs

    def on_switch(prev, nxt, z):
        J = traj.manifold.transition_jacobian(prev.chart, nxt.chart, prev.ys[-1])
        return (J @ z.reshape(n, k)).ravel()

    return TangentTrajectory(traj, sweep(traj, z0, make_rhs, on_switch, tol=tol))


def transport_matrix(traj, tol=None):
    """State-transition matrix ``Q_{0,T}`` from the start chart to the end chart."""
    n = traj.manifold.dim
    flow = variational_flow(traj.system, traj, np.eye(n), tol=tol)
    return flow.pieces[-1].ys[-1].reshape(n, n)

