"""Exact-penalty descent over control pairs and end-to-end certificate production.

The descent works in reduced coordinates of a Lagrangian chart built around
the current iterate. Directions are relaxed controls ``nu``; first-order
rates come from the backward transport matrix ``Q_{t,T}`` evaluated at
Gauss nodes, and steps are realized as ordinary controls.
"""

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import qmc

from .adjoint import PMPCertificate, _max_over_controls, certify, integrate_costate, set_chart
from .constraints import DistanceSurrogate, FreeSet, probe_specs, reduced_distance_gradient, weak_controllability_probe
from .costs import reduced_cost
from .dynamics import Control, fmt, integrate, sweep
from .errors import NotControllable, PMPError, TubeEscape
from .geometry import CotangentVector, pullback_covector
from .lagrangian import PLATEAU, LagrangianChart, build_lagrangian_chart, reduce
from .relaxed import ControlPair, RelaxedControl, approximate_relaxed, pseudometric
from .shooting import shooting_refine
from .variations import VariationSpec, approximate_variation

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass
class SolverConfig:
    eps: float = 1e-6
    sigma: float = 10.0
    kappa_max: float = 1e6
    safety: float = 2.0
    armijo: float = 0.1
    step_tol: float = 1e-8
    max_iter: int = 60
    min_lambda: float = 2.0 ** -30
    probe_budget: int = 32
    probe_tol: float = 1e-6
    max_rebuilds: int = 20
    rebuild_margin: float = 0.1
    control_samples: int = 16
    multiplier_grid: int = 41
    chatter_eps: float = 1e-3
    refine: bool = True

    def to_dict(self):
        return dict(self.__dict__)


# penalty --------------------------------------------------------------------


class PenaltyCost:
    """``J = l + kappa Phi`` on endpoint pairs."""

    def __init__(self, problem, kappa):
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        self.problem = problem
        self.kappa = float(kappa)

    def phi(self, q0, qT):
        S = self.problem.endpoint_set
        chart = S.chart or q0.chart
        x0, xT = (q.coords if q.chart == chart else q.moved(chart).coords for q in (q0, qT))
        return S.distance(np.asarray(x0), np.asarray(xT))

    def value(self, q0, qT):
        out = self.problem.cost.value(q0, qT)
        if self.kappa:
            out += self.kappa * self.phi(q0, qT)
        return out

    __call__ = value

    def of_control(self, u, start=None):
        traj = integrate(self.problem.system, start or self.problem.start, u, self.problem.tol)
        return self.value(traj.start, traj.end)


def penalty_cost(problem, kappa):
    return PenaltyCost(problem, kappa)


@dataclass
class PenaltyEstimate:
    kappa: float
    c1: float
    delta_hat: float
    capped: bool


def fit_c1(pair, spec, rs, lambdas=(0.25, 0.125, 0.0625), eps=1e-3):
    """Slope through the origin of ``rho(varied pair, pair)`` against ``lambda``."""
    lams, rhos = [], []
    for lam in lambdas:
        try:
            _, _, rho = approximate_variation(pair, spec, lam, eps, rs)
        except TubeEscape:
            continue
        lams.append(lam)
        rhos.append(rho)
    if not lams:
        raise TubeEscape("no admissible lambda for the regression of rho")
    lams, rhos = np.array(lams), np.array(rhos)
    return float(lams @ rhos / (lams @ lams))


def penalty_threshold(problem, pair, delta_hat, rs=None, spec=None, c1=None, safety=2.0,
                      kappa_max=1e6, tol=1e-6):
    """``kappa = safety * 4 c1 / |delta_hat|``, capped at ``kappa_max``."""
    if delta_hat >= -tol:
        raise NotControllable(f"no sampled decrease of the constraint distance (rate {delta_hat:.3e})")
    if c1 is None:
        c1 = fit_c1(pair, spec, rs or pair.rs)
    kappa = safety * 4.0 * c1 / abs(delta_hat)
    capped = kappa > kappa_max
    if capped:
        warnings.warn(f"penalty {kappa:.3e} capped at {kappa_max:.3e}", RuntimeWarning)
        kappa = kappa_max
    return PenaltyEstimate(float(kappa), float(c1), float(delta_hat), capped)


# reduced objective and its linearization -------------------------------------


class ReducedObjective:
    """``J`` as a function of reduced endpoint coordinates, with one-sided slopes."""

    def __init__(self, problem, rs, kappa):
        self.problem = problem
        self.rs = rs
        self.kappa = float(kappa)
        self.cost_value, self.cost_grad = reduced_cost(problem.cost, rs)
        self.ds = DistanceSurrogate(problem.endpoint_set, rs)
        self.free = isinstance(problem.endpoint_set, FreeSet)

    def phi(self, x0, xT):
        return 0.0 if self.free else self.ds(x0, xT)

    def value(self, x0, xT):
        out = self.cost_value(x0, xT)
        if self.kappa and not self.free:
            out += self.kappa * self.ds(x0, xT)
        return out

    def pair_value(self, pair):
        return self.value(pair.x0, pair.end)

    def cone(self, x0, xT):
        b0, bT = self.ds.base_coords(x0, xT)
        c0, cT = self.problem.endpoint_set.nearest(b0, bT)
        return self.problem.endpoint_set.normal_cone(c0, cT)

    def slope(self, x0, xT, w, grad=None, normal=None, cone=None):
        """One-sided derivative of ``J`` along the endpoint velocity ``w = (v0, v1)``."""
        g0, gT = grad if grad is not None else self.cost_grad(x0, xT)
        out = float(np.concatenate([g0, gT]) @ w)
        if not self.kappa or self.free:
            return out
        nvec = normal if normal is not None else reduced_distance_gradient(self.ds, x0, xT)
        if np.any(nvec):
            return out + self.kappa * float(nvec @ w)
        cone = cone or self.cone(x0, xT)
        return out + self.kappa * float(np.linalg.norm(cone.project(w)[0]))


class Linearization:
    """Transport ``Q_{t,T}`` and field data at Gauss nodes of every control cell."""

    def __init__(self, pair, rs, samples):
        self.pair = pair
        self.rs = rs
        traj = pair.trajectory
        n = rs.manifold.dim
        self.n = n
        system = rs.system
        cs = system.control_set
        self.cs = cs
        self.affine = system.control_affine

        def make_rhs(p):
            def rhs(t, z):
                x = p.dense(t)[0]
                return -(z.reshape(n, n) @ np.asarray(p.jac(t, p.chart, x), float)).ravel()
            return rhs

        psi = sweep(traj, np.eye(n).ravel(), make_rhs, lambda a, b, z: z, backward=True)
        self.Q0 = psi[0].ys[-1].reshape(n, n)
        self.grid = np.asarray(pair.u.grid)
        self.samples = samples
        nodes, weights, cells, Q, X = [], [], [], [], []
        for p, s in zip(traj.pieces, psi):
            mid, half = 0.5 * (p.a + p.b), 0.5 * (p.b - p.a)
            for node, wt in zip(GAUSS_NODES, GAUSS_WEIGHTS):
                t = mid + half * node
                nodes.append(t)
                weights.append(wt * half)
                cells.append(int(np.searchsorted(self.grid, mid, side="right")) - 1)
                Q.append(s.dense(t)[0].reshape(n, n))
                X.append(p.dense(t)[0])
        self.nodes = np.array(nodes)
        self.weights = np.array(weights)
        self.cells = np.array(cells)
        self.Q = np.array(Q)
        self.X = np.array(X)
        funs = [p.fun for p in traj.pieces for _ in GAUSS_NODES]
        self.g_u = np.array([np.asarray(f(t, "id", x), float) for f, t, x in zip(funs, self.nodes, self.X)])
        self.U = np.array([pair.u(t) for t in self.nodes])
        if self.affine:
            self.B = np.array([system.affine_parts(t, "id", x)[1] for t, x in zip(self.nodes, self.X)])
            self.QB = np.einsum("kij,kjm->kim", self.Q, self.B)
        self.ncell = len(self.grid) - 1

    def _g(self, k, u):
        return np.asarray(self.rs.system.field(self.nodes[k], "id", self.X[k], u), float)

    def endpoint_velocity(self, v0, nu_values):
        """``(v0, Q_{0,T} v0 + int Q_{t,T} (g(nu) - g(u)) dt)`` for cellwise ``nu``."""
        v1 = self.Q0 @ v0
        if self.affine:
            v1 = v1 + np.einsum("k,kij,kj->i", self.weights, self.QB, nu_values[self.cells] - self.U)
        else:
            g_nu = np.array([self._g(k, nu_values[c]) for k, c in enumerate(self.cells)])
            v1 = v1 + np.einsum("k,kij,kj->i", self.weights, self.Q, g_nu - self.g_u)
        return np.concatenate([v0, v1])

    def argmax_control(self, eta):
        """Cellwise maximizer of ``int <zeta, g(t, x, u)>`` with ``zeta = -Q^T eta``."""
        zeta = -np.einsum("kij,i->kj", self.Q, eta)
        vals = np.empty((self.ncell, self.cs.dim))
        if self.affine:
            c = np.einsum("k,kij,ki->kj", self.weights, self.B, zeta)
            acc = np.zeros((self.ncell, self.cs.dim))
            np.add.at(acc, self.cells, c)
            for j in range(self.ncell):
                vals[j] = self.cs.argmax_linear(acc[j])
            return vals, zeta
        for j in range(self.ncell):
            ks = np.flatnonzero(self.cells == j)
            scores = [sum(self.weights[k] * zeta[k] @ self._g(k, u) for k in ks) for u in self.samples]
            vals[j] = self.samples[int(np.argmax(scores))]
        return vals, zeta


@dataclass
class StepResult:
    pair: object
    accepted: bool
    stationary: bool
    lam: float = 0.0
    rate: float = 0.0
    rho: float = 0.0
    value: float = float("nan")
    perturbed: float = float("nan")
    anchor_value: float = float("nan")
    needed_radius: float = 0.0
    direction: str = ""


def _multiplier_rows(cone, n):
    """Cone rows that act on the terminal covector (start-only rows drop out)."""
    M = cone.matrix()
    lo, hi = cone.coefficient_bounds()
    keep = [i for i in range(len(M)) if np.any(M[i, n:])]
    return M[keep], lo[keep], hi[keep]


def _candidates(J, lin, pair, config, seed, slope):
    """Variation candidates: costate argmax controls over multipliers, and constants.

    ``slope(v0, vals)`` scores a candidate; it is used to zoom the scan of a
    single multiplier.
    """
    n = lin.n
    g0, gT = J.cost_grad(pair.x0, pair.end)
    fixed_start = J.problem.endpoint_set.fixed_start
    out = []

    def from_covector(eta0, etaT, label):
        vals, _ = lin.argmax_control(etaT)
        out.append((label, np.zeros(n), vals))
        if not fixed_start:
            d = eta0 + lin.Q0.T @ etaT  # gradient of the linearized J in v0
            nd = np.linalg.norm(d)
            if nd > 0:
                out.append((label + "+start", -d / nd, vals))

    from_covector(g0, gT, "cost")
    if J.kappa and not J.free:
        nvec = reduced_distance_gradient(J.ds, pair.x0, pair.end)
        if np.any(nvec):
            from_covector(g0 + J.kappa * nvec[:n], gT + J.kappa * nvec[n:], "normal")
        M, lo, hi = _multiplier_rows(J.cone(pair.x0, pair.end), n)
        lo, hi = np.maximum(lo, -J.kappa), np.minimum(hi, J.kappa)
        if len(M) == 1:
            cs = np.linspace(lo[0], hi[0], config.multiplier_grid)
            for _ in range(3):
                scored = []
                for c in cs:
                    w = c * M[0]
                    vals, _ = lin.argmax_control(gT + w[n:])
                    scored.append((slope(np.zeros(n), vals), c, vals))
                _, best, vals = min(scored, key=lambda s: s[0])
                out.append((f"multiplier {best:.6g}", np.zeros(n), vals))
                step = cs[1] - cs[0]
                cs = np.linspace(max(lo[0], best - 2 * step), min(hi[0], best + 2 * step), 21)
        elif len(M) > 1:
            pts = qmc.Halton(len(M), scramble=True, seed=seed).random(4 * config.multiplier_grid)
            for c in lo + pts * (hi - lo):
                w = M.T @ c
                from_covector(g0 + w[:n], gT + w[n:], "multiplier")
    for u in J.rs.system.control_set.samples(config.control_samples, seed):
        out.append(("constant", np.zeros(n), np.tile(u, (lin.ncell, 1))))
    return out


def _realize(pair, rs, spec, lam, config):
    """Ordinary control and start for the varied pair (no tube check)."""
    x0 = pair.x0 + lam * spec.v0
    mixed = RelaxedControl.mix(pair.u, spec.nu, lam)
    if rs.system.control_affine and rs.system.control_set.convex:
        w = mixed.averaged()
    else:
        w, _, _ = approximate_relaxed(rs, x0, mixed, config.chatter_eps, tol=pair.tol)
    return ControlPair(rs, x0, w, pair.tol)


def ekeland_step(J, pair, eps, sigma, rs=None, config=None, seed=0):
    """One sufficient-decrease step on ``J + (eps / sigma) rho(pair, .)``."""
    rs = rs or pair.rs
    config = config or SolverConfig()
    weight = 0.0 if not np.isfinite(sigma) else eps / sigma
    lin = Linearization(pair, rs, rs.system.control_set.samples(config.control_samples, seed))
    J0 = J.pair_value(pair)
    grad = J.cost_grad(pair.x0, pair.end)
    normal = None if J.free else reduced_distance_gradient(J.ds, pair.x0, pair.end)
    cone = None if J.free else J.cone(pair.x0, pair.end)
    def slope(v0, vals):
        return J.slope(pair.x0, pair.end, lin.endpoint_velocity(v0, vals), grad, normal, cone)

    best = None
    for label, v0, vals in _candidates(J, lin, pair, config, seed, slope):
        rate = slope(v0, vals)
        if best is None or rate < best[0] - 1e-15:
            best = (rate, label, v0, vals)
    rate, label, v0, vals = best
    if rate >= -config.step_tol:
        return StepResult(pair, False, True, rate=rate, value=J0, perturbed=J0, anchor_value=J0, direction=label)
    spec = VariationSpec(v0, Control(lin.grid, vals))
    lam = 1.0
    needed = 0.0
    while lam >= config.min_lambda:
        if np.linalg.norm(pair.x0 + lam * v0 - rs.x_ref0) <= rs.tube_radius:
            trial = _realize(pair, rs, spec, lam, config)
            margin = rs.tube_margin(trial.trajectory)
            if margin < 0:
                needed = max(needed, rs.tube_radius - margin)
            else:
                rho = pseudometric(trial, pair, rs)
                value = J.pair_value(trial)
                perturbed = value + weight * rho
                if rho <= sigma and perturbed <= J0 + config.armijo * lam * rate:
                    return StepResult(trial, True, False, lam, rate, rho, value, perturbed, J0, needed, label)
        else:
            needed = max(needed, np.linalg.norm(pair.x0 + lam * v0 - rs.x_ref0))
        lam *= 0.5
    return StepResult(pair, False, needed == 0.0, 0.0, rate, 0.0, J0, J0, J0, needed, label)


# solve ----------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    value: float
    perturbed: float
    anchor_value: float
    lam: float
    rate: float
    rho: float
    phi: float
    rebuilds: int
    direction: str


@dataclass
class SolveReport:
    problem: str
    path: str
    lambda0: int
    kappa: float
    delta_hat: float
    probe_budget: int
    probe_evaluated: int
    control: Control
    trajectory: object
    certificate: PMPCertificate
    cost: float
    phi: float
    eps: float
    sigma: float
    seed: int
    converged: bool
    log: list = field(default_factory=list)
    descent_control: Control = None
    descent_cost: float = float("nan")
    descent_phi: float = float("nan")
    refined: bool = False
    notes: list = field(default_factory=list)
    residual_tol: float = 1e-6

    @property
    def feasible(self):
        return self.phi <= self.residual_tol

    @property
    def passed(self):
        return bool(self.certificate.passed and self.feasible)

    def text(self):
        flag = lambda ok: "pass" if ok else "fail"
        lines = [
            f"problem: {self.problem}",
            f"seed: {self.seed}",
            f"path: {self.path}",
            f"lambda0: {self.lambda0}",
            f"kappa: {fmt(self.kappa)}",
            f"probe: delta_hat {fmt(self.delta_hat)}, {self.probe_evaluated} quotients evaluated, "
            f"budget {self.probe_budget} variations per probe pair",
            f"ekeland: eps {fmt(self.eps)} sigma {fmt(self.sigma)} iterations {len(self.log)} "
            f"{'converged' if self.converged else 'not converged'}",
            f"descent: cost {fmt(self.descent_cost)} phi {fmt(self.descent_phi)}",
            f"refined by shooting: {'yes' if self.refined else 'no'}",
            f"cost: {fmt(self.cost)}",
            f"phi: {fmt(self.phi)} {flag(self.feasible)}",
        ]
        lines += [f"note: {s}" for s in self.notes]
        return "\n".join(lines) + "\n" + self.certificate.report() + f"overall: {flag(self.passed)}\n"

    def log_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["iteration", "value", "perturbed", "anchor_value", "lambda", "rate", "rho", "phi",
                    "rebuilds", "direction"])
        for r in self.log:
            w.writerow([r.iteration, fmt(r.value), fmt(r.perturbed), fmt(r.anchor_value), fmt(r.lam),
                        fmt(r.rate), fmt(r.rho), fmt(r.phi), r.rebuilds, r.direction])
        return out.getvalue()

    def control_csv(self):
        return control_to_csv(self.control)

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {"report.txt": self.text(), "trajectory.csv": self.trajectory.to_csv(),
                 "costate.csv": self.certificate.costate.to_csv(), "iterations.csv": self.log_csv(),
                 "control.csv": self.control_csv()}
        for name, text in files.items():
            with open(d / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return d


def control_to_csv(u):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["a", "b"] + [f"u{i + 1}" for i in range(u.dim)])
    for a, b, v in u.to_rows():
        w.writerow([fmt(a), fmt(b)] + [fmt(x) for x in v])
    return out.getvalue()


def _reference(problem, q0, u, radius=None):
    """Reduced system around the trajectory of ``(q0, u)``; ``radius`` only enlarges the default."""
    traj = integrate(problem.system, q0, u, problem.tol)
    lchart = build_lagrangian_chart(problem.system, traj, base_chart=set_chart(problem.endpoint_set, traj))
    if radius is not None and radius > lchart.radius:
        lchart = LagrangianChart(traj, lchart.base_chart, radius)
    return reduce(problem.system, lchart)


def _rebuild(problem, pair, radius=None):
    q0 = pair.q0
    rs = _reference(problem, q0, pair.u, radius)
    return rs, ControlPair.from_point(rs, q0, pair.u, pair.tol)


def _probe_pairs(pair, ds, rs, config, seed, count=3, lam=0.1):
    """The pair itself when infeasible, else nearby infeasible variations of it."""
    if ds(pair.x0, pair.end) > 1e-8:
        return [pair]
    out = []
    for spec in probe_specs(rs, pair, 2 * config.probe_budget, seed, not ds.set.fixed_start):
        try:
            trial = _realize(pair, rs, spec, lam, config)
            if rs.tube_margin(trial.trajectory) < 0:
                continue
        except (TubeEscape, PMPError):
            continue
        if ds(trial.x0, trial.end) > 1e-8:
            out.append(trial)
        if len(out) >= count:
            break
    return out


def probe(problem, pair, rs, config, seed=0):
    """Worst sampled decrease rate of ``Phi`` over probe pairs (``0`` if none is infeasible)."""
    ds = DistanceSurrogate(problem.endpoint_set, rs)
    if isinstance(problem.endpoint_set, FreeSet):
        return 0.0, None, None, 0
    pairs = _probe_pairs(pair, ds, rs, config, seed)
    worst, spec_at, pair_at, evaluated = -np.inf, None, None, 0
    for p in pairs:
        res = weak_controllability_probe(p, ds, config.probe_budget, rs, seed=seed)
        evaluated += res.evaluated
        if res.delta_hat > worst:
            worst, spec_at, pair_at = res.delta_hat, res.spec, p
    if not pairs:
        worst = 0.0
    return float(worst), spec_at, pair_at, evaluated


def _basis_costates(problem, traj, chart):
    n = traj.manifold.dim
    end = traj.end.moved(chart)
    return [integrate_costate(problem.system, traj, CotangentVector(end, e)) for e in np.eye(n)]


def _fit_nodes(traj, per_piece=3):
    """Gauss nodes on subintervals of every piece, plus both piece ends at zero weight."""
    out = []
    for p in traj.pieces:
        out += [(p, p.a, 0.0), (p, p.b, 0.0)]
        edges = np.linspace(p.a, p.b, per_piece + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            out.extend((p, mid + half * s, wt * half) for s, wt in zip(GAUSS_NODES, GAUSS_WEIGHTS))
    return out


class _GapModel:
    """Maximum-condition gap as a function of the terminal covector.

    The objective is the integral of the gap plus its largest value at piece
    ends; both are convex in ``eta``, and the second term pins switch times
    that fall between quadrature nodes.
    """

    def __init__(self, problem, traj, basis):
        self.system = problem.system
        cs = self.system.control_set
        self.samples = None if cs.kind == "finite" else cs.samples(64, problem.seed)
        self.data = []
        Z = []
        for p, t, wt in _fit_nodes(traj):
            idx = traj.pieces.index(p)
            f, _ = self.system.bound(p.a, p.b)
            self.data.append((p, t, wt, p.dense(t)[0], f))
            Z.append(np.column_stack([b.pieces[idx].dense(t)[0] for b in basis]))
        self.Z = np.array(Z)

    def __call__(self, eta):
        total, worst = 0.0, 0.0
        for (p, t, wt, x, f), Zt in zip(self.data, self.Z):
            z = Zt @ eta
            h_star = float(z @ np.asarray(p.fun(t, p.chart, x), float))
            h_max, _ = _max_over_controls(self.system, f, t, p.chart, x, z, self.samples)
            g = max(h_max - h_star, 0.0)
            total += wt * g
            if wt == 0.0:
                worst = max(worst, g)
        return total + worst


def fit_costate(problem, traj, lambda0=1, reg=1e-12):
    """Terminal covector ``eta`` satisfying transversality, chosen to minimize the gap.

    ``eta = lambda0 dl_T + M_T^T c`` over normal-cone coefficients ``c``;
    the start slot pins ``c`` to an affine family on which the integral
    maximum-condition gap is minimized (ties go to the smallest ``eta``).
    With ``lambda0 = 0`` the family is linear, ``eta`` is normalized and
    ``(None, None)`` is returned when every admissible ``eta`` vanishes.
    """
    S = problem.endpoint_set
    chart = set_chart(S, traj)
    n = traj.manifold.dim
    q0, qT = traj.start.moved(chart), traj.end.moved(chart)
    cone = S.normal_cone(q0.coords, qT.coords)
    M = cone.matrix()
    M0, MT = M[:, :n], M[:, n:]
    lo, hi = cone.coefficient_bounds()
    d0, dT = problem.cost.differential(traj.start, traj.end)
    dl0 = _in_chart(d0, chart) * lambda0
    dlT = _in_chart(dT, chart) * lambda0
    basis = _basis_costates(problem, traj, chart)
    Z0 = np.column_stack([_in_chart(b.start, chart) for b in basis])  # eta -> zeta(0)
    # start-slot residual: Z0 (dlT + MT^T c) - dl0 - M0^T c = A c + r0
    A = Z0 @ MT.T - M0.T
    r0 = Z0 @ dlT - dl0
    gap = _GapModel(problem, traj, basis)
    k = M.shape[0]
    if k == 0:
        return CotangentVector(qT, dlT), np.zeros(0)
    if lambda0:
        c_p = np.linalg.lstsq(A, -r0, rcond=None)[0] if A.size else np.zeros(k)
        N = _null_space(A) if A.size else np.eye(k)
        if N.shape[1] == 0:
            c = c_p
        else:
            obj = lambda y: gap(dlT + MT.T @ (c_p + N @ y)) + reg * np.sum((dlT + MT.T @ (c_p + N @ y)) ** 2)
            if N.shape[1] == 1:
                scale = 10.0 * max(1.0, np.linalg.norm(dlT), np.linalg.norm(c_p))
                res = minimize_scalar(lambda s: obj(np.array([s])), bounds=(-scale, scale), method="bounded",
                                      options={"xatol": 1e-13})
                y = np.array([res.x])
            else:
                y = minimize(obj, np.zeros(N.shape[1]), method="Powell", options={"xtol": 1e-12, "ftol": 1e-15}).x
            c = c_p + N @ y
        if np.any(c < lo - 1e-12):
            c = np.maximum(c, lo)
    else:
        N = _null_space(A) if A.size else np.eye(k)
        best = None
        for j in range(N.shape[1]):
            for sgn in (1.0, -1.0):
                c = sgn * N[:, j]
                eta = MT.T @ c
                if np.any(c < lo - 1e-12) or np.linalg.norm(eta) <= 1e-10:
                    continue
                score = gap(eta)
                if best is None or score < best[0] - 1e-15:
                    best = (score, c / np.linalg.norm(eta))
        if best is None:
            return None, None
        c = best[1]
    eta = dlT + MT.T @ c
    return CotangentVector(qT, eta), c


def _in_chart(cov, chart):
    return np.asarray(cov.components if cov.base.chart == chart else pullback_covector(cov, chart).components)


def _null_space(A, rtol=1e-10):
    if A.size == 0:
        return np.eye(A.shape[1])
    u, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > rtol * max(s[0], 1.0))) if s.size else 0
    return vt[rank:].T


def solve(problem, config=None):
    """Penalized descent followed by a fitted certificate of the maximum principle."""
    config = config or SolverConfig()
    seed = problem.seed
    notes = []
    rs = _reference(problem, problem.start, problem.guess)
    pair = ControlPair.from_point(rs, problem.start, problem.guess, problem.tol)
    free = isinstance(problem.endpoint_set, FreeSet)
    delta_hat, evaluated, kappa = 0.0, 0, 0.0
    if free:
        path = "normal"
        notes.append("free endpoints: metric regularity is trivial, no penalty")
    else:
        delta_hat, spec, probe_pair, evaluated = probe(problem, pair, rs, config, seed)
        notes.append("controllability verdict is sampled, not uniform over a neighborhood")
        if delta_hat < -config.probe_tol:
            path = "normal"
            est = penalty_threshold(problem, probe_pair, delta_hat, rs, spec, safety=config.safety,
                                    kappa_max=config.kappa_max, tol=config.probe_tol)
            kappa = est.kappa
            if est.capped:
                notes.append("penalty capped at kappa_max")
        else:
            traj = integrate(problem.system, problem.start, problem.guess, problem.tol)
            eta, _ = fit_costate(problem, traj, 0)
            if eta is not None:
                return _finish(problem, config, "abnormal", 0.0, delta_hat, evaluated, pair, [], True, notes)
            path = "normal"
            notes.append("no sampled variation leaves S and no abnormal multiplier exists: constraint "
                         "treated as inactive, no penalty")
    log, converged = [], True
    if path == "normal":
        pair, log, converged = descend(problem, pair, kappa, config, seed)
    return _finish(problem, config, path, kappa, delta_hat, evaluated, pair, log, converged, notes)


def _finish(problem, config, path, kappa, delta_hat, evaluated, pair, log, converged, notes):
    traj = integrate(problem.system, pair.q0, pair.u, problem.tol)
    lambda0 = 1 if path == "normal" else 0
    eta, _ = fit_costate(problem, traj, lambda0)
    cert = certify(problem.system, traj, eta, lambda0, problem.cost, problem.endpoint_set,
                   tol=problem.residual_tol, seed=problem.seed)
    cost = problem.cost.value(traj.start, traj.end)
    phi = problem.feasibility(traj)
    report = SolveReport(
        problem.name, path, lambda0, kappa, delta_hat, config.probe_budget, evaluated, pair.u, traj, cert,
        cost, phi, config.eps, config.sigma, problem.seed, converged, log, descent_control=pair.u,
        descent_cost=cost, descent_phi=phi, notes=notes, residual_tol=problem.residual_tol)
    if path == "normal" and config.refine and not cert.passed:
        _polish(problem, report)
    if not report.certificate.nontrivial_ok:
        report.notes.append("certificate rejected: nontriviality margin below threshold")
    return report


def _polish(problem, report):
    try:
        res = shooting_refine(problem, report.certificate)
    except (PMPError, ValueError) as err:
        report.notes.append(f"shooting refinement skipped: {type(err).__name__}")
        return
    phi = problem.feasibility(res.trajectory)
    if res.certificate.passed and phi <= problem.residual_tol:
        report.control = res.control
        report.trajectory = res.trajectory
        report.certificate = res.certificate
        report.cost = res.cost
        report.phi = phi
        report.refined = True


def descend(problem, pair, kappa, config, seed=0):
    """Ekeland descent loop with chart re-referencing; returns ``(pair, log, converged)``."""
    rs = pair.rs
    J = ReducedObjective(problem, rs, kappa)
    log = []
    rebuilds = 0
    converged = False
    for it in range(config.max_iter):
        step = ekeland_step(J, pair, config.eps, config.sigma, rs, config, seed)
        if step.needed_radius > 0 and rebuilds < config.max_rebuilds and (not step.accepted or step.lam < 1):
            if step.accepted:
                pair = step.pair
                _log(log, it, step, J, pair, rebuilds)
            rs, pair = _rebuild(problem, pair, 1.25 * step.needed_radius / PLATEAU)
            J = ReducedObjective(problem, rs, kappa)
            rebuilds += 1
            continue
        if not step.accepted:
            converged = step.stationary
            break
        pair = step.pair
        _log(log, it, step, J, pair, rebuilds)
        if pair.margin < config.rebuild_margin * rs.tube_radius and rebuilds < config.max_rebuilds:
            rs, pair = _rebuild(problem, pair)
            J = ReducedObjective(problem, rs, kappa)
            rebuilds += 1
    return pair, log, converged


def _log(log, it, step, J, pair, rebuilds):
    log.append(IterationRecord(len(log), step.value, step.perturbed, step.anchor_value, step.lam, step.rate,
                               step.rho, J.phi(pair.x0, pair.end), rebuilds, step.direction))
