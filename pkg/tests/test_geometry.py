import numpy as np
import pytest

from pmpkit.errors import BasePointMismatch, OutOfDomain
from pmpkit.geometry import (SO3, CotangentVector, Euclidean, Galerkin, Sphere2, TangentVector, get_manifold,
                             pairing, pullback_covector, pushforward_vector, so3_exp, so3_log, to_chart)


def test_sphere_south_pole_is_origin_of_north_chart():
    s = Sphere2()
    np.testing.assert_allclose(s.from_ambient("north", [0.0, 0.0, -1.0]), [0.0, 0.0])
    np.testing.assert_allclose(s.to_ambient("north", [0.0, 0.0]), [0.0, 0.0, -1.0])


def test_sphere_equator_point():
    s = Sphere2()
    np.testing.assert_allclose(s.from_ambient("north", [1.0, 0.0, 0.0]), [1.0, 0.0])
    p = s.point([1.0, 0.0], "south")
    np.testing.assert_allclose(to_chart(p, "north"), [1.0, 0.0])


def test_euclidean_identity_chart():
    p = Euclidean(3).point([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(to_chart(p, "id"), [1.0, 2.0, 3.0])


def test_pole_outside_other_chart():
    s = Sphere2()
    with pytest.raises(OutOfDomain):
        to_chart(s.point([0.0, 0.0], "north"), "south")


@pytest.mark.parametrize("m", [Sphere2(), SO3(), Euclidean(4, scale=3.0)])
def test_round_trip_transitions(m):
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = m.sample_point(rng)
        for c in m.charts:
            try:
                y = to_chart(p, c)
            except OutOfDomain:
                continue
            back = m.transition(c, p.chart, y)
            np.testing.assert_allclose(back, p.coords, atol=1e-10)


def test_sample_points_inside_a_chart():
    rng = np.random.default_rng(0)
    for m in (Sphere2(), SO3(), Euclidean(2), Galerkin(3)):
        for _ in range(50):
            p = m.sample_point(rng)
            assert m.in_domain(p.chart, p.coords)


def test_pushforward_identity_and_linear_chart():
    e = Euclidean(2)
    v = TangentVector(e.point([0.3, 0.1]), [1.0, 0.0])
    np.testing.assert_array_equal(pushforward_vector(v, "id").components, [1.0, 0.0])
    scaled = Euclidean(2, scale=2.0)
    w = pushforward_vector(TangentVector(scaled.point([0.3, 0.1]), [1.0, 0.0]), "scaled")
    np.testing.assert_allclose(w.components, [2.0, 0.0])
    np.testing.assert_allclose(w.base.coords, [0.6, 0.2])


def test_sphere_transition_derivative_finite_difference():
    s = Sphere2()
    x = np.array([1.0, 0.0])
    J = s.transition_jacobian("north", "south", x)
    step = 1e-6
    fd = np.column_stack([(s.transition("north", "south", x + step * e) - s.transition("north", "south", x - step * e))
                          / (2 * step) for e in np.eye(2)])
    assert np.linalg.norm(J - fd) / np.linalg.norm(fd) <= 1e-5


def test_pullback_linear_chart_preserves_pairing():
    m = Euclidean(1, scale=2.0)
    q = m.point([0.5])
    zeta = CotangentVector(q.moved("scaled"), [1.0])
    back = pullback_covector(zeta, "id")
    np.testing.assert_allclose(back.components, [2.0])
    v = TangentVector(q, [1.0])
    assert pairing(back, v) == pytest.approx(pairing(zeta, pushforward_vector(v, "scaled")))


def test_pullback_identity_unchanged():
    q = Euclidean(2).point([1.0, 1.0])
    z = CotangentVector(q, [0.5, -2.0])
    np.testing.assert_array_equal(pullback_covector(z, "id").components, z.components)


@pytest.mark.parametrize("m", [Sphere2(), SO3()])
def test_pairing_chart_invariance(m):
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(100):
        q = m.sample_point(rng)
        other = [c for c in m.charts if c != q.chart][0]
        try:
            qo = q.moved(other)
        except OutOfDomain:
            continue
        zeta = CotangentVector(qo, rng.normal(size=m.dim))
        v = TangentVector(q, rng.normal(size=m.dim))
        before = pairing(zeta, v)
        after = pairing(pullback_covector(zeta, q.chart), v)
        assert abs(before - after) <= 1e-10 * max(1.0, abs(before))
        checked += 1
    assert checked > 50


def test_pairing_arithmetic():
    q = Euclidean(2).point([0.0, 0.0])
    assert pairing(CotangentVector(q, [1.0, 0.0]), TangentVector(q, [0.0, 1.0])) == 0.0
    assert pairing(CotangentVector(q, [2.0, 3.0]), TangentVector(q, [1.0, 1.0])) == 5.0


def test_pairing_base_mismatch():
    e = Euclidean(2)
    with pytest.raises(BasePointMismatch):
        pairing(CotangentVector(e.point([0.0, 0.0]), [1.0, 0.0]), TangentVector(e.point([0.1, 0.0]), [1.0, 0.0]))


def test_so3_exp_log_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(20):
        w = rng.normal(size=3)
        w *= rng.uniform(0.0, 3.0) / np.linalg.norm(w)
        R = so3_exp(w)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(so3_log(R), w, atol=1e-9)


def test_catalog_names():
    assert get_manifold("euclidean:3").dim == 3
    g = get_manifold("galerkin:4")
    np.testing.assert_array_equal(g.decay, [1, 4, 9, 16])
    assert get_manifold("sphere2").charts == ("north", "south")
    assert get_manifold("so3").dim == 3
    with pytest.raises(KeyError):
        get_manifold("torus")
