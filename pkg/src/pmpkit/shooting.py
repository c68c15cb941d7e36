"""Indirect shooting on the boundary conditions of the maximum principle.

Control-affine systems only: the maximizing control is a vertex of a box or
the direction of ``B^T zeta`` in a ball. When the linearization ``f_x`` does
not depend on the state or the control, the costate decouples and the
unknowns are the terminal covector and the constraint multipliers; the
costate is then integrated backward, which is the stable direction for
dissipative systems. Otherwise the unknown is the initial costate and state
and costate are integrated forward together.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .adjoint import certify, integrate_costate
from .constraints import FixedPair, FixedStart, LevelSet, SublevelSet
from .dynamics import Control, _raise_status, integrate, merge_knots
from .errors import JacobianSingular, NonConvergent, UnsupportedSet
from .geometry import CotangentVector

FD_STEP = 1e-7
MAX_EVENTS = 2000
SWITCH_EPS = 1e-14


@dataclass
class ShootingResult:
    certificate: object
    control: Control
    trajectory: object
    unknowns: np.ndarray
    residual: float
    iterations: int
    mode: str
    switch_times: list = field(default_factory=list)
    multipliers: np.ndarray = None
    cost: float = float("nan")

    def summary(self):
        return (f"shooting ({self.mode}): {self.iterations} iterations, residual {self.residual:.3e}, "
                f"{len(self.switch_times)} switches")


def _terminal_structure(S, n, xT, active):
    """Terminal constraint values and gradient rows (``k`` by ``n``)."""
    if isinstance(S, FixedPair):
        return xT - S.b, np.eye(n)
    if isinstance(S, LevelSet) and not S.joint:
        return np.atleast_1d(S.h(xT)), np.atleast_2d(S.dh(xT))
    if isinstance(S, SublevelSet) and active:
        return np.array([S.g(xT)]), S.dg(xT)[None, :]
    return np.zeros(0), np.zeros((0, n))


def _check(problem):
    S = problem.endpoint_set
    if not problem.system.control_affine or problem.system.control_set.kind not in ("box", "ball"):
        raise UnsupportedSet("shooting needs a control-affine field on a box or ball")
    if not S.fixed_start or not isinstance(S, (FixedStart, FixedPair, LevelSet, SublevelSet)):
        raise UnsupportedSet("shooting needs a fixed start and a terminal constraint from the catalog")


def is_decoupled(system, chart, x, rng, samples=6):
    """True when ``f_x`` does not change across sampled states and controls."""
    us = system.control_set.samples(samples, 0)
    for j in range(samples):
        t = rng.uniform(0.0, system.horizon)
        ref = np.asarray(system.field_x(t, chart, x, us[0]), float)
        y = x + rng.normal(scale=0.3, size=x.size)
        other = np.asarray(system.field_x(t, chart, y, us[j % len(us)]), float)
        if not np.allclose(other, ref, atol=1e-12, rtol=1e-12):
            return False
    return True


def _argmax(cs, c):
    return cs.argmax_linear(c)


def _switch_pattern(cs, c):
    return tuple(np.where(np.abs(c) <= SWITCH_EPS, 0, np.sign(c)).astype(int)) if cs.kind == "box" else ()


def _bang_values(cs, pattern, c):
    if cs.kind != "box":
        return _argmax(cs, c)
    signs = np.asarray(pattern)
    return np.where(signs > 0, cs.upper, np.where(signs < 0, cs.lower, cs.upper))


def _switching_roots(fn, ts, samples=4):
    """Sign changes of the scalar function ``fn`` on the refined grid ``ts``."""
    roots = []
    prev_t, prev_v = None, None
    for a, b in zip(ts[:-1], ts[1:]):
        for s in np.linspace(a, b, samples + 1)[(0 if prev_t is None else 1):]:
            v = fn(s)
            if prev_t is not None and prev_v * v < 0:
                roots.append(brentq(fn, prev_t, s, xtol=1e-15, rtol=1e-15))
            if v != 0 or prev_t is None:
                prev_t, prev_v = s, v
            else:
                prev_t = s
    return roots


class _Shooter:
    def __init__(self, problem, tol):
        _check(problem)
        self.problem = problem
        self.system = problem.system
        self.cs = self.system.control_set
        self.S = problem.endpoint_set
        self.chart = problem.start.chart
        self.x0 = np.asarray(problem.start.coords, float)
        self.n = self.x0.size
        self.T = self.system.horizon
        self.tol = tol
        self.int_tol = min(problem.tol, 1e-11)
        self.active = False
        rng = np.random.default_rng(problem.seed)
        self.decoupled = is_decoupled(self.system, self.chart, self.x0, rng)

    # cost gradient in the shooting chart
    def dl_T(self, xT):
        m = self.system.manifold
        q0, qT = m.point(self.x0, self.chart), m.point(xT, self.chart)
        _, dT = self.problem.cost.differential(q0, qT)
        if dT.base.chart == self.chart:
            return np.array(dT.components)
        J = m.transition_jacobian(self.chart, dT.base.chart, xT)
        return J.T @ dT.components

    def B(self, t, x):
        return self.system.affine_parts(t, self.chart, x)

    # decoupled: unknowns (eta, mu)
    def control_from_eta(self, eta):
        A = lambda t: np.asarray(self.system.field_x(t, self.chart, self.x0, np.zeros(self.cs.dim)), float)
        ts, zs, ks, _, status = kernels.dopri5(lambda t, z: -A(t).T @ z, self.T, 0.0, -np.asarray(eta, float),
                                               self.int_tol, self.int_tol, None, 200000, None)
        _raise_status(status, ts[-1])
        zeta = lambda t: kernels.dense_eval(ts, zs, ks, t)[0]
        grid = np.asarray(self.problem.grid)
        if self.cs.kind == "box":
            switches = []
            for i in range(self.cs.dim):
                fn = lambda t, i=i: float((self.B(t, self.x0)[1].T @ zeta(t))[i])
                switches.extend(_switching_roots(fn, np.sort(ts)))
            knots = merge_knots([0.0, self.T], switches, lo=0.0, hi=self.T)
        else:
            switches = []
            knots = merge_knots(grid, np.linspace(0.0, self.T, 4 * (len(grid) - 1) + 1), lo=0.0, hi=self.T)
        mids = 0.5 * (knots[1:] + knots[:-1])
        vals = [_argmax(self.cs, self.B(t, self.x0)[1].T @ zeta(t)) for t in mids]
        return Control(knots, vals), sorted(switches)

    def residual_decoupled(self, z):
        n = self.n
        eta, mu = z[:n], z[n:]
        u, switches = self.control_from_eta(eta)
        traj = integrate(self.system, self.problem.start, u, self.int_tol)
        xT = traj.end.moved(self.chart).coords
        h, G = _terminal_structure(self.S, n, xT, self.active)
        r = np.concatenate([eta - self.dl_T(xT) - G.T @ mu, h])
        return r, (u, traj, eta, switches)

    # coupled: unknowns (p0, mu)
    def _coupled_rhs(self, pattern):
        n = self.n

        def rhs(t, y):
            x, z = y[:n], y[n:]
            f0, B = self.B(t, x)
            u = _bang_values(self.cs, pattern, B.T @ z)
            fx = np.asarray(self.system.field_x(t, self.chart, x, u), float)
            return np.concatenate([f0 + B @ u, -fx.T @ z])
        return rhs

    def _pattern(self, t, y):
        f0, B = self.B(t, y[:self.n])
        return _switch_pattern(self.cs, B.T @ y[self.n:])

    def integrate_coupled(self, p0):
        """State and costate from ``(x0, p0)``; box controls switch at located roots."""
        n = self.n
        y = np.concatenate([self.x0, p0])
        t = 0.0
        pat = self._pattern(t, y)
        segments, switches = [], []
        while True:
            stop = (lambda tt, yy, pat=pat: self._pattern(tt, yy) != pat) if self.cs.kind == "box" else None
            ts, ys, ks, _, status = kernels.dopri5(self._coupled_rhs(pat), t, self.T, y, self.int_tol,
                                                   self.int_tol, None, 200000, stop)
            if status != kernels.STOPPED:
                _raise_status(status, ts[-1])
                segments.append((t, self.T, pat))
                return ys[-1], segments, switches
            a, b = ts[-2], ts[-1]

            def switching(tt):
                yy = kernels.dense_eval(ts, ys, ks, tt)[0]
                return self.B(tt, yy[:n])[1].T @ yy[n:]

            ca, cb = switching(a), switching(b)
            roots = [brentq(lambda tt, i=i: switching(tt)[i], a, b, xtol=1e-15, rtol=1e-15)
                     for i in range(ca.size) if ca[i] * cb[i] < 0]
            t_sw = min(roots) if roots else b
            segments.append((t, t_sw, pat))
            switches.append(t_sw)
            if len(switches) > MAX_EVENTS:
                raise NonConvergent("too many switches; singular arc suspected")
            t, y = t_sw, kernels.dense_eval(ts, ys, ks, t_sw)[0]
            pat = self._pattern(b, ys[-1])

    def residual_coupled(self, z):
        n = self.n
        p0, mu = z[:n], z[n:]
        y, segments, switches = self.integrate_coupled(p0)
        xT, zT = y[:n], y[n:]
        h, G = _terminal_structure(self.S, n, xT, self.active)
        r = np.concatenate([-zT - self.dl_T(xT) - G.T @ mu, h])
        return r, (segments, switches, -zT)

    def control_coupled(self, z):
        """Control realized on a refined grid (box: exact switch knots)."""
        n = self.n
        p0 = z[:n]
        y0 = np.concatenate([self.x0, p0])
        if self.cs.kind == "box":
            _, segments, switches = self.integrate_coupled(p0)
            knots = merge_knots([s[0] for s in segments], [self.T], lo=0.0, hi=self.T)
            mids = 0.5 * (knots[1:] + knots[:-1])
            vals = []
            for m in mids:
                pat = next(s[2] for s in segments if s[0] <= m <= s[1])
                vals.append(_bang_values(self.cs, pat, np.zeros(self.cs.dim)))
            return Control(knots, vals), switches
        ts, ys, ks, _, status = kernels.dopri5(self._coupled_rhs(()), 0.0, self.T, y0, self.int_tol,
                                               self.int_tol, None, 200000, None)
        _raise_status(status, ts[-1])
        grid = np.asarray(self.problem.grid)
        knots = merge_knots(grid, np.linspace(0.0, self.T, 8 * (len(grid) - 1) + 1), lo=0.0, hi=self.T)
        mids = 0.5 * (knots[1:] + knots[:-1])
        vals = []
        for m in mids:
            yy = kernels.dense_eval(ts, ys, ks, m)[0]
            f0, B = self.B(m, yy[:n])
            vals.append(_argmax(self.cs, B.T @ yy[n:]))
        return Control(knots, vals), []

    def residual(self, z):
        return self.residual_decoupled(z) if self.decoupled else self.residual_coupled(z)


def _newton(fun, z0, tol, max_iter):
    z = np.array(z0, float)
    r, extra = fun(z)
    it = 0
    while np.linalg.norm(r) > tol and it < max_iter:
        it += 1
        J = np.empty((r.size, z.size))
        for j in range(z.size):
            dz = np.zeros_like(z)
            dz[j] = FD_STEP * max(1.0, abs(z[j]))
            J[:, j] = (fun(z + dz)[0] - r) / dz[j]
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= 1e-13 * max(sv[0], 1.0):
            raise JacobianSingular(f"shooting Jacobian rank-deficient (smallest singular value {sv[-1]:.2e})")
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            r_new, extra_new = fun(z + lam * step)
            if np.linalg.norm(r_new) < np.linalg.norm(r):
                break
            lam *= 0.5
        else:
            break
        z, r, extra = z + lam * step, r_new, extra_new
    return z, r, extra, it


def _bisect_1d(fun, z0, tol):
    f = lambda s: fun(np.array([s]))[0][0]
    a, fa = z0, f(z0)
    width = max(1.0, abs(z0))
    for _ in range(40):
        for b in (a - width, a + width):
            if fa * f(b) <= 0:
                lo, hi = sorted((a, b))
                s = brentq(f, lo, hi, xtol=tol, rtol=1e-15)
                r, extra = fun(np.array([s]))
                return np.array([s]), r, extra
        width *= 2
    raise NonConvergent("no sign change found for one-dimensional shooting")


def _initial_unknowns(sh, problem, certificate):
    if certificate is not None:
        costate = certificate.costate
        z0, zT = costate.start.components, costate.end.components
    else:
        traj = integrate(problem.system, problem.start, problem.guess, sh.int_tol)
        xT = traj.end.moved(sh.chart).coords
        costate = integrate_costate(problem.system, traj, sh.dl_T(xT))
        z0, zT = costate.start.components, costate.end.components
    return np.asarray(z0, float), -np.asarray(zT, float)


def shooting_refine(problem, certificate=None, tol=1e-10, max_iter=40):
    """Solve the boundary-value problem of the maximum principle with ``lambda0 = 1``.

    Starting values come from ``certificate`` when given, else from the
    costate of the initial guess. Returns a :class:`ShootingResult` whose
    certificate is recomputed along the re-integrated trajectory.
    """
    sh = _Shooter(problem, tol)
    n = sh.n
    p0, eta0 = _initial_unknowns(sh, problem, certificate)
    last_err = None
    for active in ([False, True] if isinstance(sh.S, SublevelSet) else [False]):
        sh.active = active
        base = eta0 if sh.decoupled else p0
        xg = integrate(problem.system, problem.start, problem.guess, sh.int_tol).end.moved(sh.chart).coords
        _, G = _terminal_structure(sh.S, n, xg, active)
        mu0 = np.zeros(G.shape[0])
        if G.shape[0]:
            resid = eta0 - sh.dl_T(xg)
            mu0 = np.linalg.lstsq(G.T, resid, rcond=None)[0]
        z0 = np.concatenate([base, mu0])
        try:
            z, r, extra, it = _newton(sh.residual, z0, tol, max_iter)
            if np.linalg.norm(r) > tol and z.size == 1:
                z, r, extra = _bisect_1d(sh.residual, float(z[0]), tol)
        except JacobianSingular as err:
            last_err = err
            continue
        if np.linalg.norm(r) > max(tol, 1e-8):
            last_err = NonConvergent(f"shooting residual {np.linalg.norm(r):.3e} after {it} iterations")
            continue
        if isinstance(sh.S, SublevelSet):
            xT_check = (extra[1].end.moved(sh.chart).coords if sh.decoupled
                        else sh.integrate_coupled(z[:n])[0][:n])
            if not active and sh.S.g(xT_check) > 1e-12:
                continue
            if active and z[n:].size and z[n] < -1e-10:
                last_err = NonConvergent("active terminal constraint with a negative multiplier")
                continue
        break
    else:
        raise last_err or NonConvergent("shooting failed")
    if sh.decoupled:
        u, traj, eta, switches = extra
    else:
        segments, _, eta = extra
        u, switches = sh.control_coupled(z)
        traj = integrate(problem.system, problem.start, u, sh.int_tol)
    eta_cov = CotangentVector(traj.end.moved(sh.chart), np.asarray(eta, float))
    cert = certify(problem.system, traj, eta_cov, 1, problem.cost, problem.endpoint_set,
                   tol=problem.residual_tol, seed=problem.seed)
    return ShootingResult(cert, u, traj, z, float(np.linalg.norm(r)), it,
                          "backward" if sh.decoupled else "forward", list(switches), z[n:],
                          problem.cost.value(traj.start, traj.end))
