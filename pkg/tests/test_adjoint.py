import numpy as np
import pytest

from pmpkit import catalog
from pmpkit.adjoint import (PMPCertificate, audit_costate, certify, hamiltonian, integrate_costate, nontriviality,
                            pmp_residual, read_path_csv, transversality_check)
from pmpkit.constraints import FixedStart, FreeSet
from pmpkit.costs import LinearCost, ZeroCost
from pmpkit.dynamics import Control, ControlSet, ControlSystemDef, integrate, variational_flow
from pmpkit.geometry import CotangentVector, Euclidean, TangentVector, pairing, pullback_covector


def _finite_bang(points=(-1.0, 1.0)):
    m = Euclidean(1)
    return ControlSystemDef(m, lambda t, c, x, u: np.array(u, float), lambda t, c, x, u: np.zeros((1, 1)),
                            ControlSet.finite(list(points)), 1.0)


def _costate_cert(system, traj, eta, lambda0, cost, S):
    costate = integrate_costate(system, traj, eta)
    cert = PMPCertificate(lambda0, costate, 0.0)
    return cert, transversality_check(cert, cost, S)


def test_hamiltonian_values(plain):
    q = plain.manifold.point([0.0])
    assert hamiltonian(plain, 0.0, CotangentVector(q, [0.0]), [1.0]) == 0.0
    assert hamiltonian(plain, 0.0, CotangentVector(q, [-1.0]), [1.0]) == -1.0
    assert hamiltonian(plain, 0.0, CotangentVector(q, [-1.0]), [-1.0]) == 1.0


def test_hamiltonian_chart_invariance():
    prob = catalog.get_problem("sphere-geodesic")
    rng = np.random.default_rng(0)
    m = prob.system.manifold
    for _ in range(20):
        ang, rad = rng.uniform(0, 2 * np.pi), rng.uniform(0.6, 1.6)
        q = m.point([rad * np.cos(ang), rad * np.sin(ang)], "north")
        zeta = CotangentVector(q.moved("south"), rng.normal(size=2))
        u = rng.normal(size=3)
        a = hamiltonian(prob.system, 0.0, zeta, u)
        b = hamiltonian(prob.system, 0.0, pullback_covector(zeta, "north"), u)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_costate_state_independent(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([0.5], 1.0, 3))
    costate = integrate_costate(plain, traj, np.array([0.7]))
    for t in np.linspace(0, 1, 9):
        assert costate.at(t).components[0] == pytest.approx(-0.7, abs=1e-14)


def test_costate_exponential(growth):
    traj = integrate(growth, growth.manifold.point([1.0]), Control.constant([0.0], 1.0))
    costate = integrate_costate(growth, traj, np.array([0.3]))
    want = -0.3 * np.e
    assert abs(costate.start.components[0] - want) / abs(want) <= 1e-8


@pytest.mark.parametrize("name", ["galerkin-heat:4", "sphere-geodesic", "rigid-body"])
def test_duality(name):
    prob = catalog.get_problem(name)
    u = Control.constant(prob.system.control_set.samples(3, 0)[2], prob.horizon, 3)
    traj = integrate(prob.system, prob.start, u)
    n = prob.system.manifold.dim
    rng = np.random.default_rng(7)
    eta = rng.normal(size=n)
    costate = integrate_costate(prob.system, traj, eta)
    v0 = rng.normal(size=n)
    flow = variational_flow(prob.system, traj, TangentVector(traj.start, v0))
    end = pairing(CotangentVector(traj.end, -eta), flow.end)
    for t in np.linspace(0.0, prob.horizon, 9):
        assert pairing(costate.at(t), flow.at(t)) == pytest.approx(end, abs=1e-8)


def test_costate_linear_in_eta():
    prob = catalog.get_problem("galerkin-heat:4")
    traj = integrate(prob.system, prob.start, prob.guess)
    a, b = np.array([1.0, 0.0, 2.0, -1.0]), np.array([0.5, 0.3, 0.0, 0.0])
    za = integrate_costate(prob.system, traj, a).start.components
    zb = integrate_costate(prob.system, traj, b).start.components
    zab = integrate_costate(prob.system, traj, 2 * a - b).start.components
    np.testing.assert_allclose(zab, 2 * za - zb, atol=1e-10)


def test_residual_single_point_set():
    system = _finite_bang(points=(0.5,))
    traj = integrate(system, system.manifold.point([0.0]), Control.constant([0.5], 1.0))
    assert pmp_residual(system, traj, integrate_costate(system, traj, np.array([1.0])))[0] == 0.0


def test_residual_bang_optimal_and_wrong():
    system = _finite_bang()
    for u, want in ((-1.0, 0.0), (1.0, 2.0)):
        traj = integrate(system, system.manifold.point([0.0]), Control.constant([u], 1.0))
        max_res, integral = pmp_residual(system, traj, integrate_costate(system, traj, np.array([1.0])))
        assert max_res == pytest.approx(want, abs=1e-14)
        assert integral == pytest.approx(want, abs=1e-12)


def test_transversality_free_set(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([-1.0], 1.0))
    _, res = _costate_cert(plain, traj, np.array([0.5]), 1, LinearCost([0.0], [1.0]), FreeSet(1))
    # (zeta(0), -zeta(T)) = (-0.5, 0.5), dl = (0, 1)
    assert res == pytest.approx(np.hypot(0.5, 0.5), abs=1e-12)


def test_transversality_fixed_start(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([-1.0], 1.0))
    _, res = _costate_cert(plain, traj, np.array([0.5]), 1, LinearCost([0.0], [1.0]), FixedStart([0.0]))
    assert res == pytest.approx(0.5, abs=1e-12)
    _, res = _costate_cert(plain, traj, np.array([1.0]), 1, LinearCost([0.0], [1.0]), FixedStart([0.0]))
    assert res == pytest.approx(0.0, abs=1e-14)


def test_certify_bang_solution():
    prob = catalog.get_problem("bang1d")
    traj = integrate(prob.system, prob.start, Control.constant([-1.0], 1.0))
    cert = certify(prob.system, traj, np.array([1.0]), 1, prob.cost, prob.endpoint_set)
    assert cert.passed
    assert cert.max_residual == 0.0 and cert.transversality_residual <= 1e-14
    assert cert.nontriviality == pytest.approx(2.0)
    assert "certificate: pass" in cert.report()


def test_nontriviality_zero_abnormal(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([0.0], 1.0))
    cert = certify(plain, traj, np.array([0.0]), 0, ZeroCost(), FreeSet(1))
    assert nontriviality(0, cert.costate) == 0.0 and not cert.passed


def _rows(path):
    return read_path_csv(path.to_csv())


def test_audit_round_trip_and_perturbation():
    prob = catalog.get_problem("galerkin-heat:4")
    u = Control.constant([1.0], 1.0)
    traj = integrate(prob.system, prob.start, u)
    eta = np.array([0.3, -0.1, 0.05, 0.0])
    rows = _rows(integrate_costate(prob.system, traj, eta))
    ok = audit_costate(prob.system, traj, rows, 0, ZeroCost(), FreeSet(4), tol=1e-6, state_rows=_rows(traj))
    assert ok.adjoint_residual <= 1e-8 and ok.state_residual <= 1e-8
    k = len(rows) // 2
    t, c, z = rows[k]
    bad = rows[:k] + [(t, c, 1.1 * z)] + rows[k + 1:]
    audit = audit_costate(prob.system, traj, bad, 0, ZeroCost(), FreeSet(4), tol=1e-6)
    assert audit.adjoint_residual > 1e-3 and not audit.passed


def test_audit_zero_costate_fails_nontriviality(plain):
    traj = integrate(plain, plain.manifold.point([0.0]), Control.constant([-1.0], 1.0))
    rows = [(t, "id", np.zeros(1)) for t in (0.0, 0.5, 1.0)]
    audit = audit_costate(plain, traj, rows, 0, ZeroCost(), FixedStart([0.0]))
    assert audit.adjoint_residual == 0.0
    assert not audit.certificate.nontrivial_ok and not audit.passed
    assert "overall: fail" in audit.report()
