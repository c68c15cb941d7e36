"""Built-in problems with known solutions."""

import numpy as np

from .constraints import FixedStart, LevelSet, SublevelSet
from .costs import AmbientLinearCost, FunctionCost, LinearCost, QuadraticCost
from .dynamics import Control, ControlSet, ControlSystemDef
from .geometry import SO3, Euclidean, Galerkin, Sphere2, right_jacobian_inv, right_jacobian_inv_apply_derivative, so3_exp
from .problem import ProblemDef

INTERVALS = 20


def bang1d(intervals=INTERVALS, horizon=1.0):
    """``x' = u`` on ``[-1, 1]`` from ``x(0) = 0``, minimize ``x(T)``."""
    m = Euclidean(1)
    system = ControlSystemDef(
        m, lambda t, c, x, u: np.array(u, float), lambda t, c, x, u: np.zeros((1, 1)),
        ControlSet.box([-1.0], [1.0]), horizon, control_affine=True, name="bang1d")
    return ProblemDef(system, LinearCost([0.0], [1.0]), FixedStart([0.0]), m.point([0.0]),
                      Control.constant([0.0], horizon, intervals), name="bang1d",
                      oracle={"control": -1.0, "end": [-horizon], "costate": [-1.0], "cost": -horizon})


def double_integrator(intervals=INTERVALS, horizon=2.0):
    """Steer ``x'' = u`` from rest at ``-1`` to rest as far right as possible.

    The start is fixed, the terminal velocity must vanish and the cost is
    ``-x1(T)``; the optimum switches from ``+1`` to ``-1`` at ``T/2`` and
    ends at the origin when ``T = 2``.
    """
    m = Euclidean(2)
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    system = ControlSystemDef(
        m, lambda t, c, x, u: np.array([x[1], u[0]]), lambda t, c, x, u: A,
        ControlSet.box([-1.0], [1.0]), horizon, control_affine=True, name="double-integrator")
    S = LevelSet.affine([[0.0, 1.0]], [0.0], start=[-1.0, 0.0])
    half = 0.5 * horizon
    return ProblemDef(system, LinearCost([0.0, 0.0], [-1.0, 0.0]), S, m.point([-1.0, 0.0]),
                      Control.constant([0.0], horizon, intervals), name="double-integrator",
                      oracle={"switch_time": half, "end": [-1.0 + half * half, 0.0],
                              "cost": 1.0 - half * half})


def sphere_rotation_field(m):
    """``q' = omega x q`` in stereographic coordinates."""

    def parts(chart, x):
        s = -1.0 if chart == "north" else 1.0
        p = m.to_ambient(chart, x)
        d = 1.0 + s * p[2]
        D = np.hstack([np.eye(2) / d, (-s * p[:2] / d ** 2)[:, None]])
        return s, p, d, D

    def field(t, chart, x, u):
        _, p, _, D = parts(chart, x)
        return D @ np.cross(u, p)

    def field_x(t, chart, x, u):
        s, p, d, D = parts(chart, x)
        J = m.inverse_jacobian(chart, x)
        v = np.cross(u, p)
        W = np.cross(u[None, :], J.T).T  # omega x (dq/dx_j)
        second = np.empty((2, 2))
        for j in range(2):
            w = J[:, j]
            second[:, j] = (-s * (v[:2] * w[2] + w[:2] * v[2]) / d ** 2
                            + 2.0 * s * s * p[:2] * v[2] * w[2] / d ** 3)
        return D @ W + second

    return field, field_x


def so3_right_field():
    """``R' = R hat(omega)`` in exponential coordinates."""
    return (lambda t, c, x, u: right_jacobian_inv(x) @ u,
            lambda t, c, x, u: right_jacobian_inv_apply_derivative(x, u))


def rotation_trace_cost(goal):
    """``-tr(R_goal^T exp(hat(xT)))`` in the identity chart."""
    Rg = so3_exp(np.asarray(goal, float))
    return FunctionCost(lambda x0, xT: -float(np.trace(Rg.T @ so3_exp(xT))), chart="identity")


def sphere_geodesic(intervals=INTERVALS, horizon=1.2, target=(1.0, 0.0, 0.0)):
    """Rotate the south pole by an angular velocity in the unit ball toward ``target``."""
    m = Sphere2()
    field, field_x = sphere_rotation_field(m)
    system = ControlSystemDef(m, field, field_x, ControlSet.ball(3, 1.0), horizon,
                              control_affine=True, name="sphere-geodesic")
    cost = AmbientLinearCost(m, target, sign=-1.0, chart="north")
    start = m.point([0.0, 0.0], "north")

    def endpoint(T):
        # great circle from the south pole toward the target direction
        d = np.asarray(target, float)
        d = d - d[2] * np.array([0.0, 0.0, 1.0])
        d /= np.linalg.norm(d)
        return np.sin(T) * d + np.array([0.0, 0.0, -np.cos(T)])

    guess = Control.constant([0.0, 0.0, 0.0], horizon, intervals)
    return ProblemDef(system, cost, FixedStart([0.0, 0.0], chart="north"), start, guess,
                      name="sphere-geodesic",
                      oracle={"end_ambient": endpoint(horizon), "endpoint_map": endpoint,
                              "control": [0.0, -1.0, 0.0]})


def rigid_body(intervals=INTERVALS, horizon=1.0, goal=(0.0, 0.0, 2.0)):
    """Steer a rotation ``R' = R hat(omega)`` toward ``exp(hat(goal))``, ``|omega| <= 1``.

    The cost ``-tr(R_goal^T R(T))`` is minimized by turning about the goal
    axis at full rate while the goal angle exceeds the horizon.
    """
    m = SO3()
    field, field_x = so3_right_field()
    system = ControlSystemDef(m, field, field_x, ControlSet.ball(3, 1.0), horizon, control_affine=True,
                              name="rigid-body")
    cost = rotation_trace_cost(goal)
    axis = np.asarray(goal, float) / np.linalg.norm(goal)
    return ProblemDef(system, cost, FixedStart([0.0, 0.0, 0.0], chart="identity"),
                      m.point([0.0, 0.0, 0.0], "identity"),
                      Control.constant([0.0, 0.0, 0.0], horizon, intervals), name="rigid-body",
                      oracle={"end": horizon * axis, "control": axis})


def galerkin_heat(n=8, intervals=INTERVALS, horizon=1.0, goal=(0.8, -0.3), radius=2.0):
    """``x_k' = -k^2 x_k + u / k`` with scalar ``u`` in ``[-1, 1]``.

    Quadratic tracking of an unreachable modal goal from rest; the terminal
    ball around the goal is inactive at the optimum.
    """
    m = Galerkin(n)
    lam = m.decay
    b = 1.0 / m.modes
    A = -np.diag(lam)
    system = ControlSystemDef(
        m, lambda t, c, x, u: -lam * x + b * u[0], lambda t, c, x, u: A,
        ControlSet.box([-1.0], [1.0]), horizon, control_affine=True, name=f"galerkin-heat:{n}")
    g = np.zeros(n)
    g[:len(goal)] = goal[:n]
    S = SublevelSet.ball(g, radius, start=np.zeros(n))

    def random_search(samples=500, seed=0, pieces=10):
        rng = np.random.default_rng(seed)
        best = np.inf
        grid = np.linspace(0.0, horizon, pieces + 1)
        for _ in range(samples):
            vals = rng.uniform(-1.0, 1.0, size=(pieces, 1))
            best = min(best, _heat_cost(lam, b, g, grid, vals))
        return best

    return ProblemDef(system, QuadraticCost(g), S, m.point(np.zeros(n)),
                      Control.constant([0.0], horizon, intervals), name=f"galerkin-heat:{n}",
                      oracle={"random_search": random_search, "goal": g})


def _heat_cost(lam, b, goal, grid, vals):
    """Closed-form endpoint cost of a piecewise-constant control from rest."""
    x = np.zeros_like(lam)
    for a, c, u in zip(grid[:-1], grid[1:], vals[:, 0]):
        e = np.exp(-lam * (c - a))
        x = e * x + b * u * (1.0 - e) / lam
    d = x - goal
    return 0.5 * float(d @ d)


def frozen_toy(intervals=INTERVALS, horizon=1.0, start=(0.0, 0.3)):
    """``x1' = u``, ``x2' = 0`` from a fixed start; ``S`` also fixes ``x2(T)``.

    No variation moves ``x2(T)``, so the multiplier of that constraint gives
    an abnormal extremal with ``zeta = (0, const)``.
    """
    m = Euclidean(2)
    system = ControlSystemDef(
        m, lambda t, c, x, u: np.array([u[0], 0.0]), lambda t, c, x, u: np.zeros((2, 2)),
        ControlSet.box([-1.0], [1.0]), horizon, control_affine=True, name="frozen-toy")
    S = LevelSet.affine([[0.0, 1.0]], [start[1]], start=list(start))
    return ProblemDef(system, LinearCost([0.0, 0.0], [1.0, 0.0]), S, m.point(list(start)),
                      Control.constant([0.0], horizon, intervals), name="frozen-toy",
                      oracle={"lambda0": 0, "costate_support": [1]})


BUILTINS = {
    "bang1d": bang1d,
    "double-integrator": double_integrator,
    "sphere-geodesic": sphere_geodesic,
    "rigid-body": rigid_body,
    "galerkin-heat": galerkin_heat,
    "frozen-toy": frozen_toy,
}


def get_problem(spec, **params):
    """Catalog lookup; ``galerkin-heat:n`` selects the mode count."""
    name, _, arg = spec.partition(":")
    if name not in BUILTINS:
        raise KeyError(f"unknown catalog problem {spec!r}")
    if name == "galerkin-heat":
        return galerkin_heat(int(arg) if arg else 8, **params)
    if arg:
        raise KeyError(f"catalog problem {name!r} takes no argument")
    return BUILTINS[name](**params)


def names():
    return ["bang1d", "double-integrator", "sphere-geodesic", "rigid-body", "galerkin-heat:n", "frozen-toy"]
