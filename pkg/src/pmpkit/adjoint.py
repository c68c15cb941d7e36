"""Hamiltonian, costate integration, maximum-condition residuals and transversality."""

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import Path, Piece, fmt, sweep
from .geometry import CotangentVector, pairing, pullback_covector

NONTRIVIAL_MIN = 1e-8
CONTROL_SAMPLES = 64


def hamiltonian(system, t, zeta, u):
    """``<zeta, f(t, q, u)>`` at the base point of ``zeta``."""
    q = zeta.base
    return pairing(zeta, system.vector(t, q, u))


class CostateTrajectory(Path):
    """Covector path ``zeta(t)`` along a state trajectory, in the same charts."""

    def __init__(self, base, pieces):
        super().__init__(base.manifold, pieces, base.tol)
        self.base = base

    def at(self, t):
        p = self._piece(t)
        q = self.base.at(t)
        if q.chart != p.chart:
            q = q.moved(p.chart)
        return CotangentVector(q, p.dense(t)[0])

    @property
    def start(self):
        return self.at(self.base.t0)

    @property
    def end(self):
        return self.at(self.base.t1)

    def covectors(self):
        return [self.at(t) for t, _, _ in self.knot_values()]

    def to_csv(self, fh=None, prefix="z"):
        return super().to_csv(fh, prefix)


def _eta_in_chart(eta, chart):
    return eta.components if eta.base.chart == chart else pullback_covector(eta, chart).components


def costate_transport(system, traj, tol=None):
    """Pieces of ``Z(t) = Q_{t,T}^T`` solving ``Z' = -f_x^T Z`` backward from the identity.

    Rows are flattened row-major; chart switches pull ``Z`` back through the
    transition map.
    """
    n = traj.manifold.dim

    def make_rhs(p):
        def rhs(t, z):
            x = p.dense(t)[0]
            return (-np.asarray(p.jac(t, p.chart, x), float).T @ z.reshape(n, n)).ravel()
        return rhs

    def on_switch(later, earlier, z):
        J = traj.manifold.transition_jacobian(earlier.chart, later.chart, earlier.ys[-1])
        return (J.T @ z.reshape(n, n)).ravel()

    return sweep(traj, np.eye(n).ravel(), make_rhs, on_switch, backward=True, tol=tol)


def integrate_costate(system, traj, eta, tol=None, transport=None):
    """Solve ``zeta' = -f_x^T zeta`` backward from ``zeta(T) = -eta``.

    ``eta`` may also be a bare component array in the final chart. The
    matrix solution is carried so that the result is exactly linear in
    ``eta`` (step sizes never depend on it); ``transport`` reuses pieces
    from :func:`costate_transport`.
    """
    last = traj.pieces[-1]
    if isinstance(eta, CotangentVector):
        comps = _eta_in_chart(eta, last.chart)
    else:
        comps = np.asarray(eta, float)
    n = comps.size
    pieces = []
    for p in transport or costate_transport(system, traj, tol):
        Z = p.ys.reshape(-1, n, n)
        K = p.ks.reshape(-1, 7, n, n)
        pieces.append(Piece(p.a, p.b, p.chart, p.ts, Z @ -comps, K @ -comps))
    return CostateTrajectory(traj, pieces)


@dataclass
class HamiltonianGap:
    """``max_u H - H(u*)`` at the costate knots."""

    times: np.ndarray
    gaps: np.ndarray
    exact: bool

    @property
    def max_residual(self):
        return float(np.max(self.gaps)) if self.gaps.size else 0.0

    @property
    def integral_residual(self):
        return float(sum(np.trapezoid(g, t) for t, g in self._segments()))

    def _segments(self):
        # integrate piece by piece; knots repeat at piece boundaries
        cuts = np.flatnonzero(np.diff(self.times) <= 0) + 1
        return zip(np.split(self.times, cuts), np.split(self.gaps, cuts))


def _max_over_controls(system, f, t, chart, x, z, samples):
    cs = system.control_set
    if system.control_affine and cs.kind in ("box", "ball"):
        f0 = np.asarray(f(t, chart, x, np.zeros(cs.dim)), float)
        B = np.column_stack([np.asarray(f(t, chart, x, e), float) - f0 for e in np.eye(cs.dim)])
        return float(z @ f0 + cs.max_linear(B.T @ z)), True
    pts = cs.points if cs.kind == "finite" else samples
    return max(float(z @ np.asarray(f(t, chart, x, u), float)) for u in pts), cs.kind == "finite"


def hamiltonian_gap(system, traj, costate, control_samples=None, seed=0):
    """Pointwise maximum-condition gap on the costate knots.

    On each trajectory piece the optimal control is the piece's own control
    value, so knots shared by two pieces are evaluated on both sides.
    """
    samples = control_samples
    if samples is None and system.control_set.kind != "finite":
        samples = system.control_set.samples(CONTROL_SAMPLES, seed)
    times, gaps = [], []
    exact = True
    for p, c in zip(traj.pieces, costate.pieces):
        f, _ = system.bound(p.a, p.b)
        for t, z in zip(c.ts[::-1], c.ys[::-1]):
            x = p.dense(t)[0]
            h_star = float(z @ np.asarray(p.fun(t, p.chart, x), float))
            h_max, ok = _max_over_controls(system, f, t, p.chart, x, z, samples)
            exact = exact and ok
            times.append(t)
            gaps.append(max(h_max, h_star) - h_star)
    return HamiltonianGap(np.array(times), np.array(gaps), exact)


def pmp_residual(system, traj, costate, control_samples=None, seed=0):
    """``(sup gap, integral of gap)`` of the maximum condition.

    For non-affine fields on infinite control sets the maximum is taken over
    samples and is a lower bound.
    """
    gap = hamiltonian_gap(system, traj, costate, control_samples, seed)
    return gap.max_residual, gap.integral_residual


def _covector_in(zeta, chart):
    return zeta.components if zeta.base.chart == chart else pullback_covector(zeta, chart).components


def _boundary_vector(costate, cost, lambda0, chart):
    z0 = _covector_in(costate.start, chart)
    zT = _covector_in(costate.end, chart)
    w = np.concatenate([z0, -zT])
    if lambda0:
        d0, dT = cost.differential(costate.base.start, costate.base.end)
        w = w - lambda0 * np.concatenate([_covector_in(d0, chart), _covector_in(dT, chart)])
    return w


def set_chart(endpoint_set, traj):
    return endpoint_set.chart or traj.pieces[0].chart


def transversality_check(certificate, cost, endpoint_set, tol=None):
    """Distance of ``(zeta(0), -zeta(T)) - lambda0 dl`` to the normal cone of ``S``."""
    costate = certificate.costate
    traj = costate.base
    chart = set_chart(endpoint_set, traj)
    w = _boundary_vector(costate, cost, certificate.lambda0, chart)
    x0 = traj.start.coords if traj.start.chart == chart else traj.start.moved(chart).coords
    xT = traj.end.coords if traj.end.chart == chart else traj.end.moved(chart).coords
    return endpoint_set.normal_cone(x0, xT).distance(w)


@dataclass
class PMPCertificate:
    lambda0: int
    costate: CostateTrajectory
    max_residual: float
    integral_residual: float = float("nan")
    transversality_residual: float = float("nan")
    nontriviality: float = float("nan")
    exact_max: bool = True
    tol: float = 1e-6

    @property
    def max_ok(self):
        return self.max_residual <= self.tol

    @property
    def transversality_ok(self):
        return self.transversality_residual <= self.tol

    @property
    def nontrivial_ok(self):
        return self.nontriviality >= NONTRIVIAL_MIN

    @property
    def passed(self):
        return self.max_ok and self.transversality_ok and self.nontrivial_ok

    def report(self):
        flag = lambda ok: "pass" if ok else "fail"
        lines = [
            f"lambda0: {self.lambda0}",
            f"max_residual: {fmt(self.max_residual)} {flag(self.max_ok)}"
            + ("" if self.exact_max else " (sampled maximum, lower bound)"),
            f"integral_residual: {fmt(self.integral_residual)}",
            f"transversality_residual: {fmt(self.transversality_residual)} {flag(self.transversality_ok)}",
            f"nontriviality: {fmt(self.nontriviality)} {flag(self.nontrivial_ok)}",
            "residuals are evaluated on the integrator grid",
            f"certificate: {flag(self.passed)}",
        ]
        return "\n".join(lines) + "\n"


def nontriviality(lambda0, costate):
    norms = [np.linalg.norm(y) for p in costate.pieces for y in p.ys]
    return float(lambda0 + min(norms))


def certify(system, traj, eta, lambda0, cost, endpoint_set, tol=1e-6, seed=0):
    """Costate from ``eta`` and every residual of the maximum principle."""
    costate = integrate_costate(system, traj, eta)
    gap = hamiltonian_gap(system, traj, costate, seed=seed)
    cert = PMPCertificate(int(lambda0), costate, gap.max_residual, gap.integral_residual,
                          exact_max=gap.exact, tol=tol)
    cert.transversality_residual = transversality_check(cert, cost, endpoint_set)
    cert.nontriviality = nontriviality(lambda0, costate)
    return cert


def costate_from_rows(traj, rows):
    """Costate path from ``(t, chart, z)`` rows, interpolated linearly per piece.

    Used to check externally supplied costates; knots must match the
    trajectory's chart sequence.
    """
    rows = sorted(rows, key=lambda r: r[0])
    pieces = []
    for p in traj.pieces:
        sel = [r for r in rows if r[1] == p.chart and p.a - 1e-12 <= r[0] <= p.b + 1e-12]
        if len(sel) < 2:
            raise ValueError(f"costate rows do not cover [{p.a}, {p.b}] in chart {p.chart!r}")
        ts = np.array([r[0] for r in sel])
        ys = np.array([r[2] for r in sel], float)
        # piecewise-linear continuous extension: every stage slope equals the secant
        h = np.diff(ts)[:, None]
        slope = np.diff(ys, axis=0) / np.where(h == 0, 1.0, h)
        ks = np.repeat(slope[:, None, :], 7, axis=1)
        pieces.append(Piece(p.a, p.b, p.chart, ts, ys, ks))
    return CostateTrajectory(traj, pieces)


def read_path_csv(text):
    """``(t, chart, values)`` rows from a trajectory or costate CSV."""
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0][:2] != ["t", "chart"]:
        raise ValueError("path CSV needs header t,chart,...")
    return [(float(r[0]), r[1], np.array([float(v) for v in r[2:]])) for r in rows[1:] if r]


def _row_value(path, t, chart):
    for p in path.pieces:
        if p.chart == chart and p.covers(t):
            return p.dense(t)[0]
    raise ValueError(f"no piece in chart {chart!r} covers t={t}")


def row_residual(path, rows, relative=True):
    """Largest gap between ``rows`` and ``path`` at the row times."""
    worst = 0.0
    for t, chart, y in rows:
        ref = _row_value(path, t, chart)
        gap = np.linalg.norm(y - ref)
        if relative:
            gap /= max(np.linalg.norm(ref), 1.0)
        worst = max(worst, float(gap))
    return worst


@dataclass
class CostateAudit:
    certificate: PMPCertificate
    adjoint_residual: float
    state_residual: float

    @property
    def passed(self):
        tol = self.certificate.tol
        return self.certificate.passed and self.adjoint_residual <= tol and self.state_residual <= tol

    def report(self):
        flag = lambda ok: "pass" if ok else "fail"
        tol = self.certificate.tol
        return (f"state_residual: {fmt(self.state_residual)} {flag(self.state_residual <= tol)}\n"
                f"adjoint_residual: {fmt(self.adjoint_residual)} {flag(self.adjoint_residual <= tol)}\n"
                + self.certificate.report() + f"overall: {flag(self.passed)}\n")


def audit_costate(system, traj, costate_rows, lambda0, cost, endpoint_set, tol=1e-6, seed=0,
                  state_rows=None):
    """Check externally supplied costate rows along ``traj``.

    The adjoint residual compares the rows with the backward solution from
    their own terminal covector; the maximum condition is evaluated at the
    row times with linear interpolation in between.
    """
    given = costate_from_rows(traj, costate_rows)
    last = max(costate_rows, key=lambda r: r[0])
    if last[1] != traj.pieces[-1].chart:
        raise ValueError("terminal costate row must use the final chart")
    solved = integrate_costate(system, traj, -np.asarray(last[2], float))
    adjoint = row_residual(solved, costate_rows)
    state = row_residual(traj, state_rows) if state_rows else 0.0
    gap = hamiltonian_gap(system, traj, given, seed=seed)
    cert = PMPCertificate(int(lambda0), given, gap.max_residual, gap.integral_residual,
                          exact_max=gap.exact, tol=tol)
    cert.transversality_residual = transversality_check(cert, cost, endpoint_set)
    cert.nontriviality = nontriviality(lambda0, given)
    return CostateAudit(cert, adjoint, state)
