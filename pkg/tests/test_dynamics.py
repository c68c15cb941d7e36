import numpy as np
import pytest

from pmpkit import catalog
from pmpkit.catalog import sphere_rotation_field
from pmpkit.dynamics import Control, ControlSet, ControlSystemDef, field_x_error, integrate, variational_flow
from pmpkit.errors import BlowUp
from pmpkit.geometry import Sphere2, TangentVector

from conftest import linear_system


def test_constant_field(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([1.0], 1.0))
    assert traj.end.coords[0] == pytest.approx(1.0, abs=1e-9)


def test_exponential(growth):
    traj = integrate(growth, growth.manifold.point([1.0]), Control.constant([0.0], 1.0))
    assert traj.end.coords[0] == pytest.approx(np.e, abs=1e-8)


def test_sphere_great_circle():
    s = Sphere2()
    field, field_x = sphere_rotation_field(s)
    system = ControlSystemDef(s, field, field_x, ControlSet.ball(3), np.pi / 2, control_affine=True)
    traj = integrate(system, s.point([0.0, 0.0], "north"), Control.constant([0.0, -1.0, 0.0], np.pi / 2))
    end = s.to_ambient(traj.end.chart, traj.end.coords)
    np.testing.assert_allclose(end, [1.0, 0.0, 0.0], atol=1e-6)


def test_chart_switch_keeps_great_circle():
    s = Sphere2()
    field, field_x = sphere_rotation_field(s)
    T = 2.5
    system = ControlSystemDef(s, field, field_x, ControlSet.ball(3), T, control_affine=True)
    traj = integrate(system, s.point([0.0, 0.0], "north"), Control.constant([0.0, -1.0, 0.0], T))
    assert {p.chart for p in traj.pieces} == {"north", "south"}
    for t in np.linspace(0.0, T, 11):
        q = traj.at(t)
        np.testing.assert_allclose(s.to_ambient(q.chart, q.coords), [np.sin(t), 0.0, -np.cos(t)], atol=1e-7)


def test_control_knots_are_breakpoints(plain):
    u = Control([0.0, 0.3, 1.0], [[1.0], [-1.0]])
    traj = integrate(plain, plain.manifold.point([0.0]), u)
    assert traj.at(0.3).coords[0] == pytest.approx(0.3, abs=1e-12)
    assert traj.end.coords[0] == pytest.approx(0.3 - 0.7, abs=1e-12)


def test_flow_composition():
    prob = catalog.get_problem("galerkin-heat:4")
    u = Control(np.linspace(0, 1, 6), np.array([[0.5], [-1.0], [0.2], [1.0], [-0.3]]))
    full = integrate(prob.system, prob.start, u)
    first = integrate(prob.system, prob.start, u, t_span=(0.0, 0.45))
    second = integrate(prob.system, first.end, u, t_span=(0.45, 1.0))
    assert np.max(np.abs(second.end.coords - full.end.coords)) <= 10 * 1e-9


def test_blow_up_outside_chart():
    s = Sphere2()
    field, field_x = sphere_rotation_field(s)
    system = ControlSystemDef(s, field, field_x, ControlSet.ball(3), 1.0)
    with pytest.raises(BlowUp):
        integrate(system, s.point([5.0, 0.0], "north"), Control.constant([0.0, 0.0, 0.0], 1.0))


def test_variational_flow_state_independent(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([0.3], 1.0))
    flow = variational_flow(plain, traj, TangentVector(traj.start, [0.7]))
    for t in (0.0, 0.5, 1.0):
        assert flow.at(t).components[0] == pytest.approx(0.7, abs=1e-14)


def test_variational_flow_exponential(growth):
    traj = integrate(growth, growth.manifold.point([1.0]), Control.constant([0.0], 1.0))
    flow = variational_flow(growth, traj, TangentVector(traj.start, [0.4]))
    assert flow.end.components[0] == pytest.approx(0.4 * np.e, abs=1e-8)


@pytest.mark.parametrize("name", ["galerkin-heat:8", "sphere-geodesic", "rigid-body", "double-integrator"])
def test_variational_flow_matches_finite_differences(name):
    prob = catalog.get_problem(name)
    n = prob.system.manifold.dim
    u = prob.system.control_set.samples(4, seed=2)[1]
    ctrl = Control.constant(u, prob.horizon, 4)
    traj = integrate(prob.system, prob.start, ctrl)
    rng = np.random.default_rng(1)
    v0 = rng.normal(size=n)
    v0 /= np.linalg.norm(v0)
    flow = variational_flow(prob.system, traj, TangentVector(traj.start, v0))
    step = 1e-5
    ends = []
    for sgn in (1, -1):
        q = prob.system.manifold.point(prob.start.coords + sgn * step * v0, prob.start.chart)
        ends.append(integrate(prob.system, q, ctrl, tol=1e-12).coords_in(flow.end.base.chart, [prob.horizon])[0])
    fd = (ends[0] - ends[1]) / (2 * step)
    assert np.linalg.norm(fd - flow.end.components) / np.linalg.norm(fd) <= 1e-4


@pytest.mark.parametrize("name", ["bang1d", "double-integrator", "sphere-geodesic", "rigid-body", "galerkin-heat:4",
                                  "frozen-toy"])
def test_catalog_field_derivatives(name):
    prob = catalog.get_problem(name)
    assert field_x_error(prob.system, np.random.default_rng(0)) <= 1e-4


def test_trajectory_csv_header_and_digits(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([1.0 / 3.0], 1.0))
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,chart,x1"
    last = lines[-1].split(",")
    assert float(last[2]) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert len(last[2].replace("0.", "").lstrip("0")) >= 15


def test_control_validation():
    with pytest.raises(ValueError):
        Control([0.0, 0.0, 1.0], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        Control([0.0, 1.0], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        Control.constant([2.0], 1.0).check(ControlSet.box([-1.0], [1.0]))


def test_control_set_samples_deterministic():
    cs = ControlSet.box([-1.0, 0.0], [1.0, 2.0])
    a, b = cs.samples(16, seed=4), cs.samples(16, seed=4)
    np.testing.assert_array_equal(a, b)
    assert all(cs.contains(v) for v in a)
    ball = ControlSet.ball(3, 0.5)
    assert all(np.linalg.norm(v) <= 0.5 + 1e-12 for v in ball.samples(32))
    np.testing.assert_allclose(ball.argmax_linear(np.array([0.0, 3.0, 4.0])), [0.0, 0.3, 0.4])


def test_linear_system_helper_matches_closed_form():
    system = linear_system(a=-2.0, b=1.0)
    traj = integrate(system, system.manifold.point([1.0]), Control.constant([1.0], 1.0))
    assert traj.end.coords[0] == pytest.approx(0.5 + 0.5 * np.exp(-2.0), abs=1e-9)
