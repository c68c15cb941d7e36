import numpy as np
import pytest

from pmpkit import catalog
from pmpkit.dynamics import Control, ControlSet, ControlSystemDef, integrate
from pmpkit.errors import TubeEscape
from pmpkit.geometry import Euclidean
from pmpkit.lagrangian import PLATEAU, build_lagrangian_chart, certify_bounds, cutoff, cutoff_derivative, reduce

from conftest import linear_system


def _unit_reference(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([1.0], 1.0))
    return reduce(plain, build_lagrangian_chart(plain, traj))


def test_cutoff_shape():
    assert cutoff(0.0) == 1.0 and cutoff(PLATEAU) == 1.0 and cutoff(1.0) == 0.0
    s = np.linspace(0.0, 1.2, 200)
    assert np.all(np.diff(cutoff(s)) <= 0)
    h = 1e-6
    fd = (cutoff(s[1:-1] + h) - cutoff(s[1:-1] - h)) / (2 * h)
    np.testing.assert_allclose(cutoff_derivative(s[1:-1]), fd, atol=1e-6)


def test_stationary_reference_gives_identity_chart():
    system = linear_system(a=0.0, b=1.0)
    traj = integrate(system, system.manifold.point([0.4]), Control.constant([0.0], 1.0))
    lc = build_lagrangian_chart(system, traj)
    for t in (0.0, 0.5, 1.0):
        assert lc.extension_field(t, [0.4])[0] == 0.0
        assert lc.psi(t, np.array([0.7]))[0] == pytest.approx(0.7)


def test_unit_reference_translation(plain):
    rs = _unit_reference(plain)
    lc = rs.lchart
    for t in (0.0, 0.25, 1.0):
        assert lc.psi(t, np.array([t + 0.1]))[0] == pytest.approx(0.1, abs=1e-12)
        for u in (-1.0, 0.0, 1.0):
            assert rs.g(t, np.array([0.05]), np.array([u]))[0] == pytest.approx(u - 1.0, abs=1e-12)
            assert rs.g_x(t, np.array([0.05]), np.array([u]))[0, 0] == 0.0


def test_self_reduction_vanishes():
    prob = catalog.get_problem("sphere-geodesic")
    u = Control.constant([0.0, -1.0, 0.0], prob.horizon)
    traj = integrate(prob.system, prob.start, u)
    rs = reduce(prob.system, build_lagrangian_chart(prob.system, traj))
    for t in np.linspace(0.0, prob.horizon, 7):
        np.testing.assert_allclose(rs.g(t, rs.x_ref0, u(t)), 0.0, atol=1e-8)


def test_psi_round_trip_off_plateau():
    prob = catalog.get_problem("sphere-geodesic")
    u = Control.constant([0.0, -1.0, 0.0], prob.horizon)
    traj = integrate(prob.system, prob.start, u)
    lc = build_lagrangian_chart(prob.system, traj)
    rng = np.random.default_rng(2)
    for _ in range(10):
        t = rng.uniform(0, prob.horizon)
        d = rng.normal(size=2)
        x = lc.x_star(t) + d / np.linalg.norm(d) * rng.uniform(0.0, 0.95) * lc.radius
        np.testing.assert_allclose(lc.psi_inv(t, lc.psi(t, x)), x, atol=1e-9)


@pytest.mark.parametrize("name", ["sphere-geodesic", "galerkin-heat:4", "rigid-body"])
def test_conjugacy(name):
    prob = catalog.get_problem(name)
    u_ref = Control.constant(prob.system.control_set.samples(3, 1)[2], prob.horizon, 3)
    traj = integrate(prob.system, prob.start, u_ref)
    rs = reduce(prob.system, build_lagrangian_chart(prob.system, traj, radius=4.0))
    vals = prob.system.control_set.samples(6, 4)
    u = Control(np.linspace(0, prob.horizon, 5), vals[1:5])
    x0 = rs.to_reduced(0.0, prob.start) + 0.01
    red = rs.integrate(x0, u)
    full = integrate(prob.system, rs.from_reduced(0.0, x0), u)
    worst = 0.0
    for t in red.sample_times(1):
        worst = max(worst, np.linalg.norm(rs.to_reduced(t, full.at(t)) - red.at(t).coords))
    assert worst <= 1e-6


def test_tube_escape(plain):
    rs = _unit_reference(plain)
    with pytest.raises(TubeEscape):
        rs.integrate(np.array([0.0]), Control.constant([-1.0], 1.0))


def test_bounds_unit_reference(plain):
    cert = certify_bounds(_unit_reference(plain), samples=64)
    np.testing.assert_allclose(cert.m, 2.0)
    np.testing.assert_allclose(cert.k, 0.0)
    assert cert.c0 == pytest.approx(5.0)


def test_bounds_zero_field():
    system = linear_system(a=0.0, b=0.0)
    traj = integrate(system, system.manifold.point([0.0]), Control.constant([0.0], 1.0))
    cert = certify_bounds(reduce(system, build_lagrangian_chart(system, traj)), samples=32)
    assert cert.m_l1 == 0.0 and cert.k_l1 == 0.0 and cert.c0 == 1.0


def test_bounds_linear_field_norm():
    A = np.array([[0.0, 1.0], [-0.5, 0.0]])
    m = Euclidean(2)
    system = ControlSystemDef(m, lambda t, c, x, u: A @ x, lambda t, c, x, u: A, ControlSet.box([0.0], [0.0]), 1.0)
    traj = integrate(system, m.point([0.0, 0.0]), Control.constant([0.0], 1.0))
    cert = certify_bounds(reduce(system, build_lagrangian_chart(system, traj)), samples=10000, time_nodes=1)
    assert cert.k[0] == pytest.approx(1.0, rel=0.05)
    assert cert.k[0] <= 1.0 + 1e-12


def test_bounds_monotone_in_samples():
    prob = catalog.get_problem("galerkin-heat:4")
    traj = integrate(prob.system, prob.start, prob.guess)
    rs = reduce(prob.system, build_lagrangian_chart(prob.system, traj))
    small = certify_bounds(rs, samples=32, time_nodes=4)
    large = certify_bounds(rs, samples=128, time_nodes=4)
    assert np.all(large.m >= small.m) and np.all(large.k >= small.k)
