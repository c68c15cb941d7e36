"""Endpoint sets ``S``, the distance surrogate and the controllability probe.

Sets live in base-chart coordinates of the product ``(x0, xT)``; a point of
the product is the concatenation ``w = (x0, xT)`` of length ``2n``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, root

from .errors import NonUniqueProjection, UnsupportedSet
from .geometry import CotangentVector, ManifoldPoint
from .lagrangian import ball_samples
from .dynamics import Control
from .variations import DEFAULT_LAMBDAS, VariationSpec, directional_quotient

MEMBER_TOL = 1e-10


@dataclass(frozen=True)
class NormalCone:
    """``span(subspace rows) + cone(ray rows)`` in product coordinates."""

    subspace: np.ndarray
    rays: np.ndarray

    @classmethod
    def trivial(cls, d):
        return cls(np.zeros((0, d)), np.zeros((0, d)))

    @property
    def dim(self):
        return self.subspace.shape[1]

    @property
    def is_trivial(self):
        return len(self.subspace) == 0 and len(self.rays) == 0

    def generators(self):
        """Rows spanning the cone with nonnegative coefficients."""
        return np.vstack([self.subspace, -self.subspace, self.rays])

    def matrix(self):
        return np.vstack([self.subspace, self.rays])

    def coefficient_bounds(self):
        k, r = len(self.subspace), len(self.rays)
        lo = np.concatenate([np.full(k, -np.inf), np.zeros(r)])
        return lo, np.full(k + r, np.inf)

    def project(self, w):
        """Nearest cone element to ``w`` and its coefficients."""
        w = np.asarray(w, float)
        M = self.matrix()
        if len(M) == 0:
            return np.zeros_like(w), np.zeros(0)
        lo, hi = self.coefficient_bounds()
        if np.all(np.isinf(lo)):
            c = np.linalg.lstsq(M.T, w, rcond=None)[0]
        else:
            c = lsq_linear(M.T, w, bounds=(lo, hi), tol=1e-14, lsmr_tol="auto").x
        return M.T @ c, c

    def distance(self, w):
        p, _ = self.project(w)
        return float(np.linalg.norm(np.asarray(w, float) - p))


def _start_cone(n, fixed):
    return np.hstack([np.eye(n), np.zeros((n, n))]) if fixed else np.zeros((0, 2 * n))


class EndpointSet:
    """Base class for the supported set catalog."""

    variant = "abstract"
    snc = True  # closed sets in finite dimension are sequentially normally compact

    def __init__(self, n, chart=None):
        self.n = int(n)
        self.chart = chart

    @property
    def fixed_start(self):
        return False

    def split(self, w):
        return w[:self.n], w[self.n:]

    def nearest(self, x0, xT):
        raise NotImplementedError

    def distance(self, x0, xT):
        c0, cT = self.nearest(x0, xT)
        return float(np.sqrt(np.sum((x0 - c0) ** 2) + np.sum((xT - cT) ** 2)))

    def contains(self, x0, xT, tol=MEMBER_TOL):
        return self.distance(np.asarray(x0, float), np.asarray(xT, float)) <= tol

    def normal_cone(self, x0, xT):
        raise NotImplementedError

    def to_dict(self):
        raise UnsupportedSet(f"{self.variant} sets have no file representation")


class FreeSet(EndpointSet):
    variant = "free"

    def nearest(self, x0, xT):
        return np.array(x0, float), np.array(xT, float)

    def distance(self, x0, xT):
        return 0.0

    def normal_cone(self, x0, xT):
        return NormalCone.trivial(2 * self.n)

    def to_dict(self):
        return {"variant": "free"}


class FixedStart(EndpointSet):
    variant = "fixed_start"

    def __init__(self, a, chart=None):
        self.a = np.asarray(a, float)
        super().__init__(self.a.size, chart)

    @property
    def fixed_start(self):
        return True

    def nearest(self, x0, xT):
        return self.a.copy(), np.array(xT, float)

    def normal_cone(self, x0, xT):
        return NormalCone(_start_cone(self.n, True), np.zeros((0, 2 * self.n)))

    def to_dict(self):
        return {"variant": "fixed_start", "a": self.a.tolist()}


class FixedPair(EndpointSet):
    variant = "fixed_pair"

    def __init__(self, a, b, chart=None):
        self.a = np.asarray(a, float)
        self.b = np.asarray(b, float)
        super().__init__(self.a.size, chart)

    @property
    def fixed_start(self):
        return True

    def nearest(self, x0, xT):
        return self.a.copy(), self.b.copy()

    def normal_cone(self, x0, xT):
        return NormalCone(np.eye(2 * self.n), np.zeros((0, 2 * self.n)))

    def to_dict(self):
        return {"variant": "fixed_pair", "a": self.a.tolist(), "b": self.b.tolist()}


def _project_level(h, dh, x, tol=1e-13):
    """Nearest point of ``{h = 0}`` to ``x`` from the KKT system ``y - x = dh^T mu, h(y) = 0``."""
    x = np.asarray(x, float)
    y = x.copy()
    for _ in range(50):
        hv = np.atleast_1d(h(y))
        if np.max(np.abs(hv)) < tol:
            break
        J = np.atleast_2d(dh(y))
        y = y - np.linalg.lstsq(J, hv, rcond=None)[0]
    J = np.atleast_2d(dh(y))
    mu0 = np.linalg.lstsq(J.T, y - x, rcond=None)[0]
    k = mu0.size

    def kkt(z):
        yy, mu = z[:-k], z[-k:]
        return np.concatenate([yy - x - np.atleast_2d(dh(yy)).T @ mu, np.atleast_1d(h(yy))])

    sol = root(kkt, np.concatenate([y, mu0]), method="hybr", tol=1e-14)
    # hybr reports failure when xtol is below rounding even at a solved system
    ok = np.all(np.isfinite(sol.x)) and np.max(np.abs(kkt(sol.x))) < 1e-10
    return sol.x[:-k] if ok else y


class LevelSet(EndpointSet):
    """``h = 0`` on the terminal point, or on the whole pair with ``joint=True``.

    ``start`` optionally fixes the initial point (terminal form only).
    ``kind`` selects a closed-form projection: ``"affine"`` for
    ``h(y) = A y - b`` and ``"sphere"`` for ``|y - c|^2 - r^2``.
    """

    variant = "level"

    def __init__(self, n, h, dh, start=None, joint=False, kind="general", params=None, chart=None):
        super().__init__(n, chart)
        if joint and start is not None:
            raise ValueError("a joint level set carries the start condition in h")
        self.h, self.dh = h, dh
        self.start = None if start is None else np.asarray(start, float)
        self.joint = joint
        self.kind = kind
        self.params = params or {}

    @classmethod
    def affine(cls, A, b, n=None, start=None, joint=False, chart=None):
        A = np.atleast_2d(np.asarray(A, float))
        b = np.atleast_1d(np.asarray(b, float))
        n = n or (A.shape[1] // 2 if joint else A.shape[1])
        return cls(n, lambda y: A @ y - b, lambda y: A, start, joint, "affine",
                   {"A": A, "b": b}, chart)

    @classmethod
    def sphere(cls, center, radius, start=None, chart=None):
        c = np.asarray(center, float)
        r = float(radius)
        return cls(c.size, lambda y: np.array([(y - c) @ (y - c) - r * r]),
                   lambda y: 2.0 * (y - c)[None, :], start, False, "sphere",
                   {"center": c, "radius": r}, chart)

    @property
    def fixed_start(self):
        return self.start is not None

    def _project(self, y):
        if self.kind == "affine":
            A, b = self.params["A"], self.params["b"]
            return y - np.linalg.pinv(A) @ (A @ y - b)
        if self.kind == "sphere":
            c, r = self.params["center"], self.params["radius"]
            d = y - c
            nd = np.linalg.norm(d)
            if nd == 0:
                mins = [c + r * e for e in np.vstack([np.eye(len(c)), -np.eye(len(c))])]
                raise NonUniqueProjection("every point of the sphere is nearest", minimizers=mins)
            return c + r * d / nd
        return _project_level(self.h, self.dh, y)

    def nearest(self, x0, xT):
        x0, xT = np.asarray(x0, float), np.asarray(xT, float)
        if self.joint:
            return self.split(self._project(np.concatenate([x0, xT])))
        c0 = x0.copy() if self.start is None else self.start.copy()
        return c0, self._project(xT)

    def normal_cone(self, x0, xT):
        x0, xT = np.asarray(x0, float), np.asarray(xT, float)
        if self.joint:
            rows = np.atleast_2d(self.dh(np.concatenate([x0, xT])))
        else:
            J = np.atleast_2d(self.dh(xT))
            rows = np.hstack([np.zeros_like(J), J])
        rows = np.vstack([_start_cone(self.n, self.start is not None), rows])
        return NormalCone(rows, np.zeros((0, 2 * self.n)))

    def to_dict(self):
        out = {"variant": "level", "kind": self.kind}
        if self.kind == "affine":
            out.update(A=self.params["A"].tolist(), b=self.params["b"].tolist(), joint=self.joint)
        elif self.kind == "sphere":
            out.update(center=self.params["center"].tolist(), radius=self.params["radius"])
        else:
            raise UnsupportedSet("general level sets have no file representation")
        if self.start is not None:
            out["start"] = self.start.tolist()
        return out


class SublevelSet(EndpointSet):
    """``g(xT) <= 0`` for a scalar ``g``; the projection assumes ``g`` convex.

    ``kind`` is ``"ball"`` (``|y - c|^2 - r^2``), ``"halfspace"``
    (``a . y - b``) or ``"general"``.
    """

    variant = "sublevel"

    def __init__(self, n, g, dg, start=None, kind="general", params=None, chart=None):
        super().__init__(n, chart)
        self.g, self.dg = g, dg
        self.start = None if start is None else np.asarray(start, float)
        self.kind = kind
        self.params = params or {}

    @classmethod
    def ball(cls, center, radius, start=None, chart=None):
        c = np.asarray(center, float)
        r = float(radius)
        return cls(c.size, lambda y: float((y - c) @ (y - c) - r * r), lambda y: 2.0 * (y - c),
                   start, "ball", {"center": c, "radius": r}, chart)

    @classmethod
    def halfspace(cls, a, b, start=None, chart=None):
        a = np.asarray(a, float)
        return cls(a.size, lambda y: float(a @ y - b), lambda y: a.copy(), start, "halfspace",
                   {"a": a, "b": float(b)}, chart)

    @property
    def fixed_start(self):
        return self.start is not None

    def _project(self, y):
        if self.g(y) <= 0:
            return y.copy()
        if self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            return c + r * (y - c) / np.linalg.norm(y - c)
        if self.kind == "halfspace":
            a, b = self.params["a"], self.params["b"]
            return y - (a @ y - b) / (a @ a) * a
        return _project_level(lambda z: np.array([self.g(z)]), lambda z: self.dg(z)[None, :], y)

    def nearest(self, x0, xT):
        x0, xT = np.asarray(x0, float), np.asarray(xT, float)
        c0 = x0.copy() if self.start is None else self.start.copy()
        return c0, self._project(xT)

    def normal_cone(self, x0, xT, active_tol=1e-9):
        xT = np.asarray(xT, float)
        sub = _start_cone(self.n, self.start is not None)
        if self.g(xT) >= -active_tol:
            ray = np.concatenate([np.zeros(self.n), self.dg(xT)])[None, :]
        else:
            ray = np.zeros((0, 2 * self.n))
        return NormalCone(sub, ray)

    def to_dict(self):
        out = {"variant": "sublevel", "kind": self.kind}
        if self.kind == "ball":
            out.update(center=self.params["center"].tolist(), radius=self.params["radius"])
        elif self.kind == "halfspace":
            out.update(a=self.params["a"].tolist(), b=self.params["b"])
        else:
            raise UnsupportedSet("general sublevel sets have no file representation")
        if self.start is not None:
            out["start"] = self.start.tolist()
        return out


def set_from_dict(d, n):
    """Tagged-record constructor used by problem files."""
    v = d.get("variant")
    start = d.get("start")
    if v == "free":
        return FreeSet(n)
    if v == "fixed_start":
        return FixedStart(d["a"])
    if v == "fixed_pair":
        return FixedPair(d["a"], d["b"])
    if v == "level":
        kind = d.get("kind", "affine")
        if kind == "affine":
            return LevelSet.affine(d["A"], d["b"], n=n, start=start, joint=bool(d.get("joint", False)))
        if kind == "sphere":
            return LevelSet.sphere(d["center"], d["radius"], start=start)
    if v == "sublevel":
        kind = d.get("kind", "ball")
        if kind == "ball":
            return SublevelSet.ball(d["center"], d["radius"], start=start)
        if kind == "halfspace":
            return SublevelSet.halfspace(d["a"], d["b"], start=start)
    raise UnsupportedSet(f"unsupported endpoint set {d!r}")


# distance surrogate ---------------------------------------------------------


class DistanceSurrogate:
    """``Phi`` in Lagrangian-chart image coordinates of the product."""

    def __init__(self, endpoint_set, rs):
        self.set = endpoint_set
        self.rs = rs
        if endpoint_set.chart not in (None, rs.lchart.base_chart):
            raise UnsupportedSet("endpoint set must be declared in the base chart")

    def base_coords(self, x0, xT):
        """Reduced endpoint coordinates mapped back to base-chart coordinates."""
        lc = self.rs.lchart
        return lc.psi_inv(0.0, x0), lc.psi_inv(self.rs.horizon, xT)

    def reduced(self, x0, xT):
        return self.set.distance(*self.base_coords(np.asarray(x0, float), np.asarray(xT, float)))

    def __call__(self, x0, xT):
        return self.reduced(x0, xT)


def _base(ds, q):
    base = ds.rs.lchart.base_chart
    return q.coords if q.chart == base else q.manifold.transition(q.chart, base, q.coords)


def phi(ds, q0, qT):
    return ds.set.distance(_base(ds, q0), _base(ds, qT))


@dataclass
class DistanceSubgradient:
    """Unit covector pair outside ``S``; normal-cone generators on ``S``."""

    outside: bool
    pair: tuple = None
    generators: list = field(default_factory=list)


def distance_subgradient(ds, q0, qT, tol=MEMBER_TOL):
    x0, xT = _base(ds, q0), _base(ds, qT)
    m = q0.manifold
    chart = ds.rs.lchart.base_chart
    n = x0.size

    def covectors(w):
        return (CotangentVector(ManifoldPoint(m, chart, x0), w[:n]),
                CotangentVector(ManifoldPoint(m, chart, xT), w[n:]))

    c0, cT = ds.set.nearest(x0, xT)
    diff = np.concatenate([x0 - c0, xT - cT])
    dist = np.linalg.norm(diff)
    if dist > tol:
        return DistanceSubgradient(True, covectors(diff / dist))
    cone = ds.set.normal_cone(x0, xT)
    return DistanceSubgradient(False, None, [covectors(g) for g in cone.generators()])


def reduced_distance_gradient(ds, x0, xT):
    """Unit gradient of ``Phi`` in reduced product coordinates (zero on ``S``)."""
    b0, bT = ds.base_coords(np.asarray(x0, float), np.asarray(xT, float))
    c0, cT = ds.set.nearest(b0, bT)
    diff = np.concatenate([b0 - c0, bT - cT])
    d = np.linalg.norm(diff)
    return diff / d if d > MEMBER_TOL else np.zeros_like(diff)


# controllability probe ------------------------------------------------------


@dataclass
class ProbeResult:
    delta_hat: float
    spec: object
    evaluated: int
    budget: int
    quotients: list = field(default_factory=list)


def probe_specs(rs, pair, budget, seed=0, vary_start=True):
    """Deterministic sequence of variation specs; a larger budget extends a smaller one."""
    T = rs.horizon
    n = rs.manifold.dim
    cs = rs.system.control_set
    us = cs.samples(max(budget, 2), seed)
    specs = [VariationSpec(np.zeros(n), Control.constant(u, T)) for u in us]
    if vary_start:
        for e in np.vstack([np.eye(n), -np.eye(n)]):
            specs.append(VariationSpec(e, pair.u))
        vs = ball_samples(n, budget + 1, 1.0, np.zeros(n), seed)[1:]
        for j, v in enumerate(vs):
            specs.append(VariationSpec(v, Control.constant(us[j % len(us)], T)))
    return specs[:budget]


def weak_controllability_probe(pair, ds, sample_budget=32, rs=None, lambdas=DEFAULT_LAMBDAS[2:7],
                               seed=0, vary_start=None):
    """Smallest sampled Dini quotient of ``Phi`` along variations of ``pair``.

    Start-point directions are sampled only when the set leaves the start free.
    """
    rs = rs or pair.rs
    if isinstance(ds.set, FreeSet):
        return ProbeResult(0.0, None, 0, sample_budget)
    if vary_start is None:
        vary_start = not ds.set.fixed_start
    best, best_spec, quots = np.inf, None, []
    base = ds(pair.x0, pair.end)
    specs = probe_specs(rs, pair, sample_budget, seed, vary_start)
    for spec in specs:
        q = directional_quotient(ds, pair, spec, rs, lambdas, base_value=base).estimate
        quots.append(q)
        if q < best:
            best, best_spec = q, spec
    return ProbeResult(float(min(best, 0.0) if np.isfinite(best) else 0.0), best_spec, len(specs),
                       sample_budget, quots)
