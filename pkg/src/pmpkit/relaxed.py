"""Relaxed controls, chattering partitions and the pseudometric on pairs."""

import bisect
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import Control, merge_knots
from .errors import BudgetExceeded, ChartMismatch, DegenerateWeight, GridTooCoarse
from .geometry import TangentVector

WEIGHT_FLOOR = 1e-12


class RelaxedControl:
    """Finite convex combination ``sum_i w_i delta_{u_i(t)}`` of ordinary controls."""

    def __init__(self, atoms):
        atoms = [(float(w), u) for w, u in atoms]
        if not atoms:
            raise ValueError("relaxed control needs at least one atom")
        weights = np.array([w for w, _ in atoms])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("relaxed-control weights must be positive and sum to one")
        horizons = {round(u.horizon, 12) for _, u in atoms}
        if len(horizons) != 1:
            raise ValueError("all atoms must share the horizon")
        self.atoms = atoms
        self.grid = merge_knots(*[u.grid for _, u in atoms])

    @classmethod
    def dirac(cls, u):
        return cls([(1.0, u)])

    @classmethod
    def mix(cls, u, nu, lam):
        """``(1 - lam) delta_u + lam nu``; ``nu`` may itself be relaxed."""
        nu = as_relaxed(nu)
        if lam <= 0:
            return cls.dirac(u)
        if lam >= 1:
            return nu
        return cls([(1.0 - lam, u)] + [(lam * w, v) for w, v in nu.atoms])

    def __repr__(self):
        return f"RelaxedControl(weights={self.weights.round(6).tolist()})"

    @property
    def weights(self):
        return np.array([w for w, _ in self.atoms])

    @property
    def controls(self):
        return [u for _, u in self.atoms]

    @property
    def horizon(self):
        return self.atoms[0][1].horizon

    @property
    def dim(self):
        return self.atoms[0][1].dim

    @property
    def single(self):
        return len(self.atoms) == 1

    def values(self, t):
        return [u(t) for _, u in self.atoms]

    def interval_field(self, system, a, b):
        f, fx = system.bound(a, b)
        parts = [(w, u.value_on(a, b)) for w, u in self.atoms]
        if len(parts) == 1:
            u0 = parts[0][1]
            return (lambda t, c, x: f(t, c, x, u0)), (lambda t, c, x: fx(t, c, x, u0))

        def fun(t, c, x):
            return sum(w * np.asarray(f(t, c, x, u), float) for w, u in parts)

        def jac(t, c, x):
            return sum(w * np.asarray(fx(t, c, x, u), float) for w, u in parts)

        return fun, jac

    def averaged(self):
        """Ordinary control ``sum_i w_i u_i(t)``."""
        mids = 0.5 * (self.grid[1:] + self.grid[:-1])
        vals = np.array([sum(w * u(m) for w, u in self.atoms) for m in mids])
        return Control(self.grid, vals)


def as_relaxed(u):
    return u if isinstance(u, RelaxedControl) else RelaxedControl.dirac(u)


def evaluate_relaxed_field(system, t, q, nu):
    nu = as_relaxed(nu)
    comps = sum(w * np.asarray(system.field(t, q.chart, q.coords, u(t)), float) for w, u in nu.atoms)
    return TangentVector(q, comps)


# chattering -----------------------------------------------------------------


@dataclass(frozen=True)
class ChatteringPartition:
    """Uniform knots ``t_j = jT/r`` and the per-atom blocks ``A_i``.

    ``blocks[i]`` is an ``(r, 2)`` array of intervals; ``dropped`` lists the
    indices of atoms removed for negligible weight.
    """

    knots: np.ndarray
    blocks: list
    weights: np.ndarray
    kept: tuple
    dropped: tuple

    @property
    def diameter(self):
        return float(np.max(np.diff(self.knots)))

    @property
    def r(self):
        return len(self.knots) - 1

    def measures(self):
        return np.array([float(np.sum(b[:, 1] - b[:, 0])) for b in self.blocks])

    def boundaries(self):
        return np.unique(np.concatenate([self.knots] + [b.ravel() for b in self.blocks]))

    def atom_at(self, t):
        """Index (into ``kept``) of the block containing ``t``."""
        T = self.knots[-1]
        j = min(int(t / T * self.r), self.r - 1)
        for i, b in enumerate(self.blocks):
            if b[j, 0] <= t < b[j, 1]:
                return i
        return len(self.blocks) - 1


def chattering_partition(weights, r, T):
    weights = np.asarray(weights, float)
    if r < 1:
        raise ValueError("need at least one partition interval")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be convex")
    kept = tuple(int(i) for i in np.flatnonzero(weights >= WEIGHT_FLOOR))
    dropped = tuple(int(i) for i in np.flatnonzero(weights < WEIGHT_FLOOR))
    if dropped:
        warnings.warn(f"atoms {list(dropped)} dropped for negligible weight", DegenerateWeight,
                      stacklevel=2)
    w = weights[list(kept)]
    w = w / w.sum()
    knots = np.linspace(0.0, T, r + 1)
    left, width = knots[:-1], np.diff(knots)
    cum = np.concatenate([[0.0], np.cumsum(w)])
    cum[-1] = 1.0
    blocks = []
    for i in range(len(w)):
        lo = left + cum[i] * width
        hi = knots[1:] if i == len(w) - 1 else left + cum[i + 1] * width
        blocks.append(np.column_stack([lo, hi]))
    return ChatteringPartition(knots, blocks, w, kept, dropped)


def fine_grid(partition, refine=16):
    """Grid refining every block interval into ``refine`` equal pieces."""
    pieces = []
    for b in partition.blocks:
        for lo, hi in b:
            pieces.append(np.linspace(lo, hi, refine + 1))
    return np.unique(np.concatenate(pieces))


def _check_grid(grid, partition):
    T = partition.knots[-1]
    need = partition.boundaries()
    idx = np.searchsorted(grid, need)
    idx = np.clip(idx, 0, len(grid) - 1)
    near = np.minimum(np.abs(grid[idx] - need), np.abs(grid[np.maximum(idx - 1, 0)] - need))
    if np.any(near > 1e-12 * max(T, 1.0)):
        raise GridTooCoarse("fine grid does not contain every block boundary")
    counts = np.diff(np.searchsorted(grid, partition.knots, side="left"))
    if np.any(counts < 10):
        raise GridTooCoarse("fine grid must be at least 10 times finer than the partition")


def chattering_error(h, weights, partition, grid=None, relative=True):
    """Per-atom sup over ``t`` of the block-integral error.

    ``h`` holds one integrand per atom, each a callable of ``t`` (scalar or
    vector valued) or an array of samples on ``grid``. With ``relative`` the
    block integral is rescaled by ``1/w_i`` before comparing with the full
    integral; otherwise the full integral is scaled by ``w_i``.
    """
    weights = np.asarray(weights, float)
    grid = fine_grid(partition) if grid is None else np.asarray(grid, float)
    _check_grid(grid, partition)
    mids = 0.5 * (grid[1:] + grid[:-1])
    errs = []
    for slot, i in enumerate(partition.kept):
        hi = h[i]
        vals = np.array([np.atleast_1d(hi(t)) for t in grid], float) if callable(hi) \
            else np.asarray(hi, float).reshape(len(grid), -1)
        b = partition.blocks[slot]
        j = np.minimum(np.searchsorted(b[:, 0], mids, side="right") - 1, len(b) - 1)
        inside = (j >= 0) & (mids >= b[np.maximum(j, 0), 0]) & (mids < b[np.maximum(j, 0), 1])
        errs.append(kernels.chatter_sup(grid, np.ascontiguousarray(vals), inside.astype(np.uint8),
                                        float(partition.weights[slot]), bool(relative)))
    return np.array(errs)


def chatter(nu, partition):
    """Spliced control equal to atom ``i`` on block ``A_i``."""
    nu = as_relaxed(nu)
    grid = merge_knots(partition.boundaries(), nu.grid)
    mids = 0.5 * (grid[1:] + grid[:-1])
    controls = [nu.controls[i] for i in partition.kept]
    vals = np.array([controls[partition.atom_at(m)](m) for m in mids])
    return Control(grid, vals)


def sup_distance(a, b):
    """Sup-norm gap between two single-chart trajectories over their knots and step midpoints."""
    ts = np.unique(np.concatenate([a.sample_times(2), b.sample_times(2)]))
    xa = np.array([a.coords_at(t)[1] for t in ts])
    xb = np.array([b.coords_at(t)[1] for t in ts])
    return float(np.max(np.linalg.norm(xa - xb, axis=1)))


def approximate_relaxed(rs, x0, nu, eps, r_start=8, r_max=2 ** 14, tol=1e-9):
    """Chatter ``nu`` with doubling block counts until reduced trajectories are ``eps``-close.

    Returns ``(control, achieved sup error, r)``.
    """
    nu = as_relaxed(nu)
    if nu.single:
        return nu.controls[0], 0.0, 0
    relaxed_traj = rs.integrate(x0, nu, tol)
    r = r_start
    while r <= r_max:
        part = chattering_partition(nu.weights, r, rs.horizon)
        w = chatter(nu, part)
        err = sup_distance(relaxed_traj, rs.integrate(x0, w, tol))
        if err < eps:
            return w, err, r
        r *= 2
    raise BudgetExceeded(f"chattering error {err:.3e} above {eps:.3e} at r={r // 2}")


# pairs and the pseudometric -------------------------------------------------


class ControlPair:
    """Initial reduced coordinates and a control, with the reduced trajectory cached."""

    def __init__(self, rs, x0, u, tol=1e-9):
        self.rs = rs
        self.x0 = np.array(x0, float)
        self.x0.setflags(write=False)
        self.u = u
        self.tol = tol
        self._traj = None

    @classmethod
    def from_point(cls, rs, q0, u, tol=1e-9):
        return cls(rs, rs.to_reduced(0.0, q0), u, tol)

    def __repr__(self):
        return f"ControlPair(x0={self.x0}, u={self.u!r})"

    @property
    def q0(self):
        return self.rs.from_reduced(0.0, self.x0)

    @property
    def trajectory(self):
        if self._traj is None:
            self._traj = self.rs.integrate(self.x0, self.u, self.tol, check_tube=False)
        return self._traj

    @property
    def margin(self):
        return self.rs.tube_margin(self.trajectory)

    @property
    def in_open_tube(self):
        return self.margin > 0

    @property
    def in_closed_tube(self):
        return self.margin >= 0

    @property
    def end(self):
        return self.trajectory.end.coords

    def endpoints(self):
        """Manifold points ``(q(0), q(T))`` in the base chart."""
        T = self.rs.horizon
        return self.rs.from_reduced(0.0, self.x0), self.rs.from_reduced(T, self.end)


GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(5)


def _piece_index(traj):
    return [p.a for p in traj.pieces]


def _field_on(traj, starts, t_mid, t):
    p = traj.pieces[max(bisect.bisect_right(starts, t_mid) - 1, 0)]
    x = p.dense(t)[0]
    return np.asarray(p.fun(t, p.chart, x), float), np.asarray(p.jac(t, p.chart, x), float)


def pseudometric(a, b, rs=None):
    """``|x_a(0) - x_b(0)| + int |g_a - g_b| + int |g_x,a - g_x,b|`` along reduced trajectories."""
    rs = rs or a.rs
    if a.rs is not rs or b.rs is not rs:
        raise ChartMismatch("pairs belong to different Lagrangian charts")
    ta, tb = a.trajectory, b.trajectory
    term1 = float(np.linalg.norm(a.x0 - b.x0))
    knots = merge_knots(ta.grid, tb.grid)
    sa, sb = _piece_index(ta), _piece_index(tb)
    term2 = term3 = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for node, wt in zip(GAUSS_NODES, GAUSS_WEIGHTS):
            t = mid + half * node
            ga, ja = _field_on(ta, sa, mid, t)
            gb, jb = _field_on(tb, sb, mid, t)
            term2 += wt * half * np.linalg.norm(ga - gb)
            term3 += wt * half * np.linalg.norm(ja - jb, 2)
    return term1 + term2 + term3
