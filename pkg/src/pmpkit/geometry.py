"""Charted manifolds: points, tangent and cotangent vectors, chart changes.

A point lives in a *home chart* as a coordinate vector; nothing requires an
ambient embedding, though the sphere and rotation group carry one so tests
have an independent oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BasePointMismatch, OutOfDomain

DOMAIN_SLACK = 1e-9
BASE_POINT_TOL = 1e-12


def _frozen(a):
    arr = np.array(a, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    manifold: "ChartedManifold" = field(repr=False)
    chart: str
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords))
        if self.coords.size != self.manifold.dim:
            raise ValueError(f"expected {self.manifold.dim} coordinates, got {self.coords.size}")

    def in_chart(self, target):
        return to_chart(self, target)

    def moved(self, target):
        """The same point re-expressed in chart ``target``."""
        if target == self.chart:
            return self
        return ManifoldPoint(self.manifold, target, to_chart(self, target))


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(self.components))


@dataclass(frozen=True, eq=False)
class CotangentVector:
    base: ManifoldPoint
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(self.components))


class ChartedManifold:
    """Finite atlas of charts whose domains are closed coordinate balls.

    Subclasses provide ``transition`` and, unless ``approximate`` is set,
    an analytic ``transition_jacobian``.
    """

    name = "manifold"
    approximate = False

    def __init__(self, dim, charts, radii=None, centers=None):
        self.dim = int(dim)
        self.charts = tuple(charts)
        self.radii = dict(radii or {c: np.inf for c in self.charts})
        self.centers = {c: np.zeros(self.dim) for c in self.charts}
        if centers:
            self.centers.update({k: np.asarray(v, float) for k, v in centers.items()})

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"

    # chart structure -------------------------------------------------------

    def in_domain(self, chart, x):
        r = np.linalg.norm(np.asarray(x, float) - self.centers[chart])
        return bool(r <= self.radii[chart] + DOMAIN_SLACK)

    def domain_fraction(self, chart, x):
        """Distance from the chart center relative to the domain radius."""
        rad = self.radii[chart]
        if not np.isfinite(rad):
            return 0.0
        return float(np.linalg.norm(np.asarray(x, float) - self.centers[chart]) / rad)

    def transition(self, src, dst, x):
        raise NotImplementedError

    def transition_jacobian(self, src, dst, x, step=1e-6):
        # central differences; subclasses with exact derivatives override
        x = np.asarray(x, float)
        jac = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step
            jac[:, j] = (self.transition(src, dst, x + e) - self.transition(src, dst, x - e)) / (2 * step)
        return jac

    def best_chart(self, chart, x):
        """Chart whose domain holds the point most comfortably."""
        best, best_frac = None, np.inf
        for c in self.charts:
            try:
                y = x if c == chart else self.transition(chart, c, x)
            except (ZeroDivisionError, FloatingPointError, ValueError):
                continue
            if not np.all(np.isfinite(y)) or not self.in_domain(c, y):
                continue
            frac = self.domain_fraction(c, y)
            if frac < best_frac:
                best, best_frac = c, frac
        return best

    def point(self, coords, chart=None):
        return ManifoldPoint(self, chart or self.charts[0], coords)

    def sample_point(self, rng):
        return self.point(rng.normal(size=self.dim))

    # optional ambient evaluators (test oracles only) ------------------------

    def to_ambient(self, chart, x):
        raise NotImplementedError(f"{self.name} has no ambient representation")

    def from_ambient(self, chart, p):
        raise NotImplementedError(f"{self.name} has no ambient representation")


class Euclidean(ChartedManifold):
    """R^n with the identity chart and, optionally, a scaled chart ``x -> s x``."""

    def __init__(self, n, scale=None):
        charts = ["id"] if scale is None else ["id", "scaled"]
        super().__init__(n, charts)
        self.scale = scale
        self.name = f"euclidean:{n}"

    def _factor(self, chart):
        return 1.0 if chart == "id" else float(self.scale)

    def transition(self, src, dst, x):
        return np.asarray(x, float) * (self._factor(dst) / self._factor(src))

    def transition_jacobian(self, src, dst, x, step=None):
        return np.eye(self.dim) * (self._factor(dst) / self._factor(src))

    def to_ambient(self, chart, x):
        return np.asarray(x, float) / self._factor(chart)

    def from_ambient(self, chart, p):
        return np.asarray(p, float) * self._factor(chart)


class Galerkin(Euclidean):
    """Span of the first ``n`` Dirichlet sine modes of the unit-interval heat operator.

    Coordinates are modal amplitudes; ``modes`` are the wave numbers and
    ``decay`` the Laplacian eigenvalues ``k^2`` (with ``pi`` scaled out).
    """

    def __init__(self, n):
        super().__init__(n)
        self.name = f"galerkin:{n}"
        self.modes = np.arange(1, n + 1)
        self.decay = self.modes.astype(float) ** 2


class Sphere2(ChartedManifold):
    """Unit sphere in R^3 with stereographic charts from each pole.

    ``north`` projects from the north pole, so the south pole sits at its
    origin; ``south`` is the mirror image. The transition is inversion.
    """

    name = "sphere2"

    def __init__(self, radius=2.0):
        super().__init__(2, ["north", "south"], radii={"north": radius, "south": radius})

    def transition(self, src, dst, x):
        x = np.asarray(x, float)
        if src == dst:
            return x.copy()
        r2 = float(x @ x)
        if r2 == 0.0:
            raise OutOfDomain("pole is not covered by the other stereographic chart")
        return x / r2

    def transition_jacobian(self, src, dst, x, step=None):
        x = np.asarray(x, float)
        if src == dst:
            return np.eye(2)
        r2 = float(x @ x)
        return (r2 * np.eye(2) - 2.0 * np.outer(x, x)) / r2 ** 2

    def to_ambient(self, chart, x):
        x = np.asarray(x, float)
        r2 = float(x @ x)
        z = (r2 - 1.0) / (1.0 + r2)
        if chart == "south":
            z = -z
        return np.array([2 * x[0] / (1 + r2), 2 * x[1] / (1 + r2), z])

    def from_ambient(self, chart, p):
        p = np.asarray(p, float)
        denom = 1.0 - p[2] if chart == "north" else 1.0 + p[2]
        return p[:2] / denom

    def inverse_jacobian(self, chart, x):
        """Derivative of the ambient parametrization, a 3x2 matrix."""
        x = np.asarray(x, float)
        a = 1.0 + float(x @ x)
        top = 2.0 * np.eye(2) / a - 4.0 * np.outer(x, x) / a ** 2
        bottom = 4.0 * x / a ** 2
        if chart == "south":
            bottom = -bottom
        return np.vstack([top, bottom[None, :]])

    def sample_point(self, rng):
        p = rng.normal(size=3)
        p /= np.linalg.norm(p)
        chart = "north" if p[2] <= 0 else "south"
        return self.point(self.from_ambient(chart, p), chart)


# rotation group -------------------------------------------------------------


def hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(w):
    w = np.asarray(w, float)
    th = np.linalg.norm(w)
    K = hat(w)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1 - np.cos(th)) / th ** 2 * K @ K


def so3_log(R):
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    th = np.arccos(c)
    if th < 1e-8:
        return vee(R - R.T) / 2.0
    if np.pi - th < 1e-6:
        # near the cut locus the antisymmetric part vanishes; use the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[:, k] / np.sqrt(B[k, k])
        if vee(R - R.T) @ axis < 0:
            axis = -axis
        return th * axis / np.linalg.norm(axis)
    return th / (2.0 * np.sin(th)) * vee(R - R.T)


def right_jacobian(w):
    w = np.asarray(w, float)
    th = np.linalg.norm(w)
    K = hat(w)
    if th < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return np.eye(3) - (1 - np.cos(th)) / th ** 2 * K + (th - np.sin(th)) / th ** 3 * K @ K


def _inv_coeff(th):
    # 1/th^2 - (1 + cos th) / (2 th sin th) and its derivative in th
    if th < 1e-3:
        return 1.0 / 12.0 + th ** 2 / 720.0, th / 360.0
    s, c = np.sin(th), np.cos(th)
    beta = 1.0 / th ** 2 - (1 + c) / (2 * th * s)
    num, den = 1 + c, 2 * th * s
    dnum, dden = -s, 2 * s + 2 * th * c
    dbeta = -2.0 / th ** 3 - (dnum * den - num * dden) / den ** 2
    return beta, dbeta


def right_jacobian_inv(w):
    w = np.asarray(w, float)
    K = hat(w)
    beta, _ = _inv_coeff(np.linalg.norm(w))
    return np.eye(3) + 0.5 * K + beta * K @ K


def right_jacobian_inv_apply_derivative(w, omega):
    """Derivative in ``w`` of ``right_jacobian_inv(w) @ omega``."""
    w = np.asarray(w, float)
    omega = np.asarray(omega, float)
    th = np.linalg.norm(w)
    beta, dbeta = _inv_coeff(th)
    wo = float(w @ omega)
    # K^2 omega = w (w.omega) - omega |w|^2
    k2o = w * wo - omega * th ** 2
    d = -0.5 * hat(omega) + beta * (wo * np.eye(3) + np.outer(w, omega) - 2.0 * np.outer(omega, w))
    if th > 0:
        d += np.outer(k2o, w) * (dbeta / th)
    return d


class SO3(ChartedManifold):
    """Rotation group with exponential coordinates about two centers.

    ``identity`` is centered at the identity rotation, ``offset`` at the
    fixed rotation ``exp(offset_vector)``.
    """

    name = "so3"

    def __init__(self, offset=(0.0, 0.0, 2.0), radius=2.5):
        super().__init__(3, ["identity", "offset"], radii={"identity": radius, "offset": radius})
        self.offset = np.asarray(offset, float)
        self._centers = {"identity": np.eye(3), "offset": so3_exp(self.offset)}

    def transition(self, src, dst, x):
        if src == dst:
            return np.asarray(x, float).copy()
        M = self._centers[dst].T @ self._centers[src]
        return so3_log(M @ so3_exp(x))

    def transition_jacobian(self, src, dst, x, step=None):
        if src == dst:
            return np.eye(3)
        y = self.transition(src, dst, x)
        return right_jacobian_inv(y) @ right_jacobian(x)

    def to_ambient(self, chart, x):
        return self._centers[chart] @ so3_exp(x)

    def from_ambient(self, chart, R):
        return so3_log(self._centers[chart].T @ np.asarray(R, float))

    def sample_point(self, rng):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 2.0) / np.linalg.norm(w)
        return self.point(w, "identity")


class UserManifold(ChartedManifold):
    """Manifold from user-supplied transition maps; derivatives by differences."""

    approximate = True

    def __init__(self, name, dim, charts, transitions, radii=None):
        super().__init__(dim, charts, radii)
        self.name = name
        self._transitions = dict(transitions)

    def transition(self, src, dst, x):
        if src == dst:
            return np.asarray(x, float).copy()
        return np.asarray(self._transitions[(src, dst)](np.asarray(x, float)), float)


def get_manifold(spec):
    """Look up a catalog manifold: ``euclidean:n``, ``sphere2``, ``so3``, ``galerkin:n``."""
    name, _, arg = spec.partition(":")
    if name == "euclidean":
        return Euclidean(int(arg))
    if name == "galerkin":
        return Galerkin(int(arg))
    if name == "sphere2" and not arg:
        return Sphere2()
    if name == "so3" and not arg:
        return SO3()
    raise KeyError(f"unknown manifold {spec!r}")


# operations -----------------------------------------------------------------


def _require(manifold, chart, x):
    if not manifold.in_domain(chart, x):
        raise OutOfDomain(f"point {np.array2string(np.asarray(x))} outside chart {chart!r}")


def to_chart(p, target):
    """Coordinates of ``p`` in chart ``target``."""
    m = p.manifold
    if target == p.chart:
        return np.array(p.coords)
    try:
        y = m.transition(p.chart, target, p.coords)
    except (ZeroDivisionError, FloatingPointError) as exc:
        raise OutOfDomain(str(exc)) from exc
    if not np.all(np.isfinite(y)):
        raise OutOfDomain(f"point not representable in chart {target!r}")
    _require(m, target, y)
    return y


def pushforward_vector(v, target):
    base = v.base
    y = to_chart(base, target)
    J = base.manifold.transition_jacobian(base.chart, target, base.coords)
    return TangentVector(ManifoldPoint(base.manifold, target, y), J @ v.components)


def pullback_covector(zeta, source):
    """Express ``zeta`` in chart ``source`` via the transpose transition derivative."""
    base = zeta.base
    x = to_chart(base, source)
    J = base.manifold.transition_jacobian(source, base.chart, x)
    return CotangentVector(ManifoldPoint(base.manifold, source, x), J.T @ zeta.components)


def pairing(zeta, v):
    if v.base.chart != zeta.base.chart:
        v = pushforward_vector(v, zeta.base.chart)
    gap = np.max(np.abs(v.base.coords - zeta.base.coords)) if v.base.coords.size else 0.0
    scale = max(1.0, float(np.max(np.abs(zeta.base.coords), initial=0.0)))
    if gap > BASE_POINT_TOL * scale:
        raise BasePointMismatch(f"base points differ by {gap:.3e}")
    return float(zeta.components @ v.components)
