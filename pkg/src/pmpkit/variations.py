"""Global variations of trajectories and their first- and second-order certificates.

All quantities live in reduced coordinates of a Lagrangian chart; the
variation with spec ``(v0, nu)`` and parameter ``lam`` starts at
``x0 + lam v0`` and is driven by the relaxed control ``(1 - lam) delta_u + lam nu``.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import _raise_status, fmt, merge_knots
from .errors import NonConvergent, TubeEscape
from .geometry import TangentVector
from .relaxed import ControlPair, RelaxedControl, approximate_relaxed, as_relaxed, pseudometric, sup_distance

DEFAULT_LAMBDAS = tuple(2.0 ** -k for k in range(3, 11))
# deviations below this are rounding noise and pass any bound
NOISE_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class VariationSpec:
    """Initial direction ``v0`` (norm at most one) and relaxed control ``nu``."""

    v0: np.ndarray
    nu: object

    def __post_init__(self):
        v0 = np.array(self.v0, float).ravel()
        if np.linalg.norm(v0) > 1.0 + 1e-12:
            raise ValueError("v0 must lie in the unit ball")
        v0.setflags(write=False)
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "nu", as_relaxed(self.nu))

    def __repr__(self):
        return f"VariationSpec(v0={self.v0.tolist()}, nu={self.nu!r})"


def vary(pair, spec, lam):
    """Varied initial reduced coordinates and mixed relaxed control."""
    if lam == 0:
        return pair.x0, pair.u
    x0 = pair.x0 + lam * spec.v0
    if np.linalg.norm(x0 - pair.rs.x_ref0) > pair.rs.tube_radius:
        raise TubeEscape(f"varied start leaves the tube at lambda={lam:g}")
    return x0, RelaxedControl.mix(pair.u, spec.nu, lam)


def varied_pair(pair, spec, lam):
    x0, u = vary(pair, spec, lam)
    if lam == 0:
        return pair
    return ControlPair(pair.rs, x0, u, pair.tol)


def _varied_trajectory(pair, spec, lam):
    vp = varied_pair(pair, spec, lam)
    traj = vp.trajectory
    if pair.rs.tube_margin(traj) < 0:
        raise TubeEscape(f"varied trajectory leaves the tube at lambda={lam:g}")
    return traj


@dataclass(frozen=True)
class EndpointDerivative:
    v0: TangentVector
    v1: TangentVector


def endpoint_derivative(pair, spec, rs=None):
    """``v1 = Q_{0,T} v0 + int_0^T Q_{t,T} (g(t, x, nu) - g(t, x, u)) dt``.

    One backward sweep carries ``Q_{t,T}`` and the accumulated integral.
    """
    rs = rs or pair.rs
    traj = pair.trajectory
    n = rs.manifold.dim
    nu = spec.nu
    z = np.concatenate([np.eye(n).ravel(), np.zeros(n)])
    h = None
    for p in traj.pieces[::-1]:
        cuts = merge_knots([p.a, p.b], nu.grid[(nu.grid > p.a) & (nu.grid < p.b)])
        for start, stop in zip(cuts[::-1][:-1], cuts[::-1][1:]):
            fnu, _ = nu.interval_field(rs.system, stop, start)

            def rhs(t, zz, p=p, fnu=fnu):
                x = p.dense(t)[0]
                Q = zz[:n * n].reshape(n, n)
                A = np.asarray(p.jac(t, p.chart, x), float)
                delta = np.asarray(fnu(t, p.chart, x), float) - np.asarray(p.fun(t, p.chart, x), float)
                return np.concatenate([-(Q @ A).ravel(), -Q @ delta])

            ts, zs, _, h, status = kernels.dopri5(rhs, start, stop, z, traj.tol, traj.tol, h, 200000, None)
            _raise_status(status, ts[-1])
            z = zs[-1]
    Q0 = z[:n * n].reshape(n, n)
    v1 = Q0 @ spec.v0 + z[n * n:]
    return EndpointDerivative(TangentVector(traj.start, spec.v0), TangentVector(traj.end, v1))


@dataclass
class RateCertificate:
    """Measured deviations against a Gronwall-type bound and a log-log slope."""

    kind: str
    lambdas: np.ndarray
    deviations: np.ndarray
    bounds: np.ndarray
    slope: float
    order: int
    constant: float
    passed: bool
    slope_ok: bool
    bound_ok: bool
    dropped: list = field(default_factory=list)
    slope_tol: float = 0.1

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["lambda", "deviation", "bound", "pass"])
        for lam, dev, b in zip(self.lambdas, self.deviations, self.bounds):
            w.writerow([fmt(lam), fmt(dev), fmt(b), "true" if dev <= b + NOISE_FLOOR else "false"])
        w.writerow(["slope", fmt(self.slope), fmt(self.order), "true" if self.passed else "false"])
        return out.getvalue()

    def summary(self):
        return (f"{self.kind}: slope {self.slope:.4f} (target {self.order} +- {self.slope_tol}), "
                f"constant {self.constant:.6g}, bound {'holds' if self.bound_ok else 'violated'}, "
                f"{'PASS' if self.passed else 'FAIL'}")


def fit_slope(lams, devs, floor=NOISE_FLOOR):
    lams, devs = np.asarray(lams, float), np.asarray(devs, float)
    mask = devs > floor
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(lams[mask]), np.log(devs[mask]), 1)[0])


def _certificate(kind, order, lams, devs, consts, constant, dropped, slope_tol):
    lams, devs = np.array(lams), np.array(devs)
    bounds = consts * lams ** order
    bound_ok = bool(np.all(devs <= bounds + NOISE_FLOOR))
    slope = fit_slope(lams, devs)
    if np.all(devs <= NOISE_FLOOR):
        slope_ok = True  # identically zero: the bound holds with any order
    else:
        slope_ok = bool(np.isfinite(slope) and abs(slope - order) <= slope_tol)
    return RateCertificate(kind, lams, devs, bounds, slope, order, constant,
                           bound_ok and slope_ok, slope_ok, bound_ok, dropped, slope_tol)


def linear_rate_certificate(pair, spec, rs=None, lambdas=DEFAULT_LAMBDAS, bounds=None,
                            slope_tol=0.1):
    """Sup-over-time deviation of the variation against ``c0 lam``."""
    rs = rs or pair.rs
    bounds = bounds or rs.bounds
    base = pair.trajectory
    lams, devs, dropped = [], [], []
    for lam in lambdas:
        try:
            traj = _varied_trajectory(pair, spec, lam)
        except TubeEscape:
            dropped.append(lam)
            continue
        lams.append(lam)
        devs.append(sup_distance(base, traj))
    return _certificate("linear", 1, lams, devs, bounds.c0, bounds.c0, dropped, slope_tol)


def second_order_certificate(pair, spec, rs=None, lambdas=DEFAULT_LAMBDAS[:6], bounds=None,
                             slope_tol=0.2):
    """Defect ``|x^lam(T) - x(T) - lam v1|`` against ``c3 lam^2``."""
    rs = rs or pair.rs
    bounds = bounds or rs.bounds
    v1 = endpoint_derivative(pair, spec, rs).v1.components
    xT = pair.end
    lams, devs, dropped = [], [], []
    for lam in lambdas:
        try:
            traj = _varied_trajectory(pair, spec, lam)
        except TubeEscape:
            dropped.append(lam)
            continue
        lams.append(lam)
        devs.append(float(np.linalg.norm(traj.end.coords - xT - lam * v1)))
    return _certificate("second", 2, lams, devs, bounds.c3, bounds.c3, dropped, slope_tol)


def approximate_variation(pair, spec, lam, eps, rs=None, method="auto"):
    """Ordinary control realizing the variation; returns ``(w, sup error, rho)``.

    ``method="average"`` uses the averaged control, which reproduces the
    mixed field exactly for control-affine systems on convex control sets;
    ``"chatter"`` always splices atoms; ``"auto"`` picks the former when it
    applies.
    """
    rs = rs or pair.rs
    if lam == 0:
        return pair.u, 0.0, 0.0
    x0, mixed = vary(pair, spec, lam)
    affine = rs.system.control_affine and rs.system.control_set.convex
    if method == "average" or (method == "auto" and affine):
        w = mixed.averaged()
        relaxed_traj = rs.integrate(x0, mixed, pair.tol)
        err = sup_distance(relaxed_traj, rs.integrate(x0, w, pair.tol))
    else:
        w, err, _ = approximate_relaxed(rs, x0, mixed, eps, tol=pair.tol)
    rho = pseudometric(ControlPair(rs, x0, w, pair.tol), pair, rs)
    return w, err, rho


@dataclass
class QuotientEstimate:
    estimate: float
    dispersion: float
    lambdas: np.ndarray
    quotients: np.ndarray
    converged: bool


def directional_quotient(cost, pair, spec, rs=None, lambdas=DEFAULT_LAMBDAS, tol=1e-3,
                         strict=False, base_value=None):
    """Extrapolated limit of ``(cost(varied endpoints) - cost(endpoints)) / lam``.

    ``cost`` takes reduced endpoint coordinates ``(x0, xT)``. Richardson
    extrapolation assumes a first-order error term; the dispersion is the
    spread of the last three extrapolants.
    """
    rs = rs or pair.rs
    c_base = cost(pair.x0, pair.end) if base_value is None else base_value
    lams, qs = [], []
    for lam in sorted(lambdas, reverse=True):
        try:
            traj = _varied_trajectory(pair, spec, lam)
        except TubeEscape:
            continue
        x0 = pair.x0 + lam * spec.v0
        lams.append(lam)
        qs.append((cost(x0, traj.end.coords) - c_base) / lam)
    lams, qs = np.array(lams), np.array(qs)
    if len(qs) == 0:
        raise NonConvergent("no admissible lambda for the quotient")
    if len(qs) == 1:
        return QuotientEstimate(float(qs[0]), float("inf"), lams, qs, False)
    rich = (lams[:-1] * qs[1:] - lams[1:] * qs[:-1]) / (lams[:-1] - lams[1:])
    est = float(rich[-1])
    tail = rich[-3:]
    disp = float(np.max(np.abs(tail - est)))
    ok = disp <= tol * max(1.0, abs(est))
    if strict and not ok:
        raise NonConvergent(f"quotient dispersion {disp:.3e} above tolerance")
    return QuotientEstimate(est, disp, lams, qs, ok)
