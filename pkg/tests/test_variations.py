import numpy as np
import pytest

from pmpkit import catalog
from pmpkit.dynamics import Control, ControlSet, ControlSystemDef, integrate
from pmpkit.errors import NonConvergent
from pmpkit.geometry import Euclidean
from pmpkit.lagrangian import build_lagrangian_chart, reduce
from pmpkit.relaxed import ControlPair, RelaxedControl
from pmpkit.variations import (VariationSpec, approximate_variation, directional_quotient, endpoint_derivative,
                               linear_rate_certificate, second_order_certificate, vary, varied_pair)


def _pair(system, x0, u, radius=None):
    traj = integrate(system, system.manifold.point(x0), u)
    rs = reduce(system, build_lagrangian_chart(system, traj, radius=radius))
    return rs, ControlPair.from_point(rs, system.manifold.point(x0), u)


def _catalog_pair(name, radius=None):
    prob = catalog.get_problem(name)
    u = Control.constant(prob.system.control_set.samples(3, 0)[2] * 0.5, prob.horizon, 4)
    traj = integrate(prob.system, prob.start, u)
    rs = reduce(prob.system, build_lagrangian_chart(prob.system, traj, radius=radius))
    return prob, rs, ControlPair.from_point(rs, prob.start, u)


def _smooth_system():
    m = Euclidean(1)
    return ControlSystemDef(m, lambda t, c, x, u: np.sin(x) + u, lambda t, c, x, u: np.array([[np.cos(x[0])]]),
                            ControlSet.box([-1.0], [1.0]), 1.0, control_affine=True)


def test_spec_rejects_long_v0():
    with pytest.raises(ValueError):
        VariationSpec([1.0, 1.0], Control.constant([0.0], 1.0))


def test_vary_zero_is_identity(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    spec = VariationSpec([1.0], Control.constant([1.0], 1.0))
    x0, u = vary(pair, spec, 0.0)
    assert x0 is pair.x0 and u is pair.u
    assert varied_pair(pair, spec, 0.0) is pair


def test_vary_start_in_linear_chart():
    prob = catalog.get_problem("galerkin-heat:4")
    rs = reduce(prob.system, build_lagrangian_chart(prob.system, integrate(prob.system, prob.start, prob.guess)))
    pair = ControlPair.from_point(rs, prob.start, prob.guess)
    x0, _ = vary(pair, VariationSpec([1.0, 0.0, 0.0, 0.0], prob.guess), 0.1)
    np.testing.assert_allclose(x0, [0.1, 0.0, 0.0, 0.0])


def test_vary_endpoint_closed_form(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    vp = varied_pair(pair, VariationSpec([0.0], Control.constant([1.0], 1.0)), 0.25)
    assert vp.end[0] == pytest.approx(0.25, abs=1e-12)


def test_endpoint_derivative_same_control():
    prob, rs, pair = _catalog_pair("sphere-geodesic")
    v0 = np.array([0.6, -0.3])
    d = endpoint_derivative(pair, VariationSpec(v0, pair.u), rs)
    n = 2
    Q = np.column_stack([endpoint_derivative(pair, VariationSpec(e, pair.u), rs).v1.components for e in np.eye(n)])
    np.testing.assert_allclose(d.v1.components, Q @ v0, atol=1e-10)


def test_endpoint_derivative_plain(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    d = endpoint_derivative(pair, VariationSpec([0.0], Control.constant([1.0], 1.0)), rs)
    assert d.v1.components[0] == pytest.approx(1.0, abs=1e-12)


def test_endpoint_derivative_finite_difference_sphere():
    prob, rs, pair = _catalog_pair("sphere-geodesic")
    spec = VariationSpec([0.3, 0.4], Control.constant([1.0, 0.0, 0.0], prob.horizon))
    v1 = endpoint_derivative(pair, spec, rs).v1.components
    lam = 1e-4
    fd = (varied_pair(pair, spec, lam).end - pair.end) / lam
    assert np.linalg.norm(fd - v1) / np.linalg.norm(v1) <= 1e-3


def test_endpoint_derivative_linear_in_v0():
    prob, rs, pair = _catalog_pair("rigid-body")
    nu = Control.constant([0.0, 0.0, 1.0], prob.horizon)
    a, b = np.array([0.3, 0.0, 0.1]), np.array([-0.2, 0.5, 0.0])
    zero = endpoint_derivative(pair, VariationSpec(np.zeros(3), nu), rs).v1.components
    va = endpoint_derivative(pair, VariationSpec(a, nu), rs).v1.components - zero
    vb = endpoint_derivative(pair, VariationSpec(b, nu), rs).v1.components - zero
    vab = endpoint_derivative(pair, VariationSpec(a + b, nu), rs).v1.components - zero
    np.testing.assert_allclose(vab, va + vb, atol=1e-8)


def test_linear_certificate_trivial_spec(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    cert = linear_rate_certificate(pair, VariationSpec([0.0], pair.u), rs)
    assert np.all(cert.deviations == 0.0) and cert.passed


def test_linear_certificate_bang(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([1.0], 1.0))
    cert = linear_rate_certificate(pair, VariationSpec([0.0], Control.constant([0.0], 1.0)), rs)
    np.testing.assert_allclose(cert.deviations, cert.lambdas, rtol=1e-9)
    assert cert.constant == pytest.approx(5.0)
    assert cert.passed and cert.slope == pytest.approx(1.0, abs=1e-6)


def test_linear_certificate_galerkin_slope():
    prob, rs, pair = _catalog_pair("galerkin-heat:8")
    cert = linear_rate_certificate(pair, VariationSpec(np.zeros(8), Control.constant([-1.0], 1.0)), rs)
    assert 0.9 <= cert.slope <= 1.1 and cert.passed
    assert not cert.dropped


def test_certificate_csv(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([1.0], 1.0))
    text = linear_rate_certificate(pair, VariationSpec([0.0], Control.constant([0.0], 1.0)), rs).to_csv()
    lines = text.splitlines()
    assert lines[0] == "lambda,deviation,bound,pass"
    assert lines[-1].startswith("slope,")
    assert len(lines) == 10


def test_second_order_state_independent(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    cert = second_order_certificate(pair, VariationSpec([0.5], Control.constant([1.0], 1.0)), rs)
    assert np.all(cert.deviations <= 1e-12) and cert.passed


def test_second_order_nonlinear_slope():
    system = _smooth_system()
    rs, pair = _pair(system, [0.5], Control.constant([0.0], 1.0), radius=4.0)
    cert = second_order_certificate(pair, VariationSpec([0.0], Control.constant([1.0], 1.0)), rs)
    assert 1.8 <= cert.slope <= 2.2
    assert np.all(cert.deviations / cert.lambdas ** 2 <= 10 * cert.constant)


@pytest.mark.parametrize("name", ["sphere-geodesic", "galerkin-heat:4", "rigid-body"])
def test_second_order_defect_within_gronwall_constant(name):
    prob, rs, pair = _catalog_pair(name)
    n = prob.system.manifold.dim
    spec = VariationSpec(np.full(n, 0.5 / np.sqrt(n)), Control.constant(prob.system.control_set.samples(4, 3)[3],
                                                                        prob.horizon))
    cert = second_order_certificate(pair, spec, rs)
    assert np.max(cert.deviations / cert.lambdas ** 2) <= 10 * rs.bounds.c3


def test_approximate_variation_zero(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    w, err, rho = approximate_variation(pair, VariationSpec([0.0], Control.constant([1.0], 1.0)), 0.0, 1e-3, rs)
    assert w is pair.u and err == 0.0 and rho == 0.0


@pytest.mark.parametrize("method", ["auto", "chatter"])
def test_approximate_variation_rho_is_linear(plain, method):
    # |nu - u| = 2 on the whole horizon, so rho = 2 lam
    rs, pair = _pair(plain, [0.0], Control.constant([-1.0], 1.0))
    spec = VariationSpec([0.0], Control.constant([1.0], 1.0))
    for lam in (0.25, 0.125, 0.0625):
        _, err, rho = approximate_variation(pair, spec, lam, 1e-3, rs, method=method)
        assert err < 1e-3
        assert rho == pytest.approx(2 * lam, abs=1e-9)


def test_approximate_variation_affine_fit():
    prob, rs, pair = _catalog_pair("galerkin-heat:4")
    spec = VariationSpec(np.zeros(4), RelaxedControl([(0.5, Control.constant([1.0], 1.0)),
                                                       (0.5, Control.constant([-1.0], 1.0))]))
    lams = [0.0, 0.0625, 0.125, 0.25]
    eps = 1e-3
    rhos = [approximate_variation(pair, spec, lam, eps, rs, method="chatter")[2] for lam in lams]
    slope, intercept = np.polyfit(lams, rhos, 1)
    assert slope >= 0 and intercept <= 10 * eps


def test_quotient_constant_cost(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    q = directional_quotient(lambda x0, xT: 3.0, pair, VariationSpec([0.0], Control.constant([1.0], 1.0)), rs)
    assert q.estimate == 0.0 and q.converged


def test_quotient_linear_cost(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    q = directional_quotient(lambda x0, xT: xT[0], pair, VariationSpec([0.0], Control.constant([1.0], 1.0)), rs)
    assert q.estimate == pytest.approx(1.0, abs=1e-9)


def test_quotient_matches_chain_rule():
    prob, rs, pair = _catalog_pair("sphere-geodesic")
    spec = VariationSpec([0.2, -0.1], Control.constant([0.0, 1.0, 0.0], prob.horizon))
    cost = lambda x0, xT: float(np.sin(xT[0]) + xT[1] ** 2 + 0.3 * x0[0])
    grad0 = np.array([0.3, 0.0])
    xT = pair.end
    gradT = np.array([np.cos(xT[0]), 2 * xT[1]])
    want = grad0 @ spec.v0 + gradT @ endpoint_derivative(pair, spec, rs).v1.components
    q = directional_quotient(cost, pair, spec, rs)
    assert q.estimate == pytest.approx(want, rel=1e-3)


def test_quotient_nonconvergent_flag(plain):
    rs, pair = _pair(plain, [0.0], Control.constant([0.0], 1.0))
    spec = VariationSpec([0.0], Control.constant([1.0], 1.0))
    wild = lambda x0, xT: float(np.sign(np.sin(1e4 * xT[0])) * np.sqrt(abs(xT[0])))
    q = directional_quotient(wild, pair, spec, rs)
    assert not q.converged
    with pytest.raises(NonConvergent):
        directional_quotient(wild, pair, spec, rs, strict=True)
