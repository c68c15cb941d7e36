import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpkit import _kernels_py, kernels

compiled = pytest.importorskip("pmpkit._kernels")


def _rhs(t, y):
    return np.array([y[1], -y[0] + 0.3 * np.sin(t)])


def test_backend_follows_environment():
    want = "python" if os.environ.get("PMPKIT_PURE_PYTHON") == "1" else "cython"
    assert kernels.BACKEND == want


@pytest.mark.parametrize("t1", [2.0, -1.5])
def test_dopri5_backends_agree(t1):
    # summation order differs between the backends, so step sequences may
    # drift apart by rounding; solutions must agree to tolerance
    y0 = np.array([1.0, 0.0])
    a = _kernels_py.dopri5(_rhs, 0.0, t1, y0, 1e-10, 1e-10, 0.0, 100000, None)
    b = compiled.dopri5(_rhs, 0.0, t1, y0, 1e-10, 1e-10, 0.0, 100000, None)
    assert a[4] == b[4] == kernels.DONE
    assert a[0][-1] == b[0][-1] == t1
    assert abs(a[0].size - b[0].size) <= 2
    np.testing.assert_allclose(a[1][-1], b[1][-1], rtol=0, atol=1e-9)
    tq = np.linspace(0.0, t1, 25)
    np.testing.assert_allclose(_kernels_py.dense_eval(*a[:3], tq), compiled.dense_eval(*b[:3], tq), atol=1e-9)


def test_dopri5_first_step_identical():
    y0 = np.array([1.0, 0.0])
    a = _kernels_py.dopri5(_rhs, 0.0, 0.5, y0, 1e-8, 1e-8, 0.0, 1, None)
    b = compiled.dopri5(_rhs, 0.0, 0.5, y0, 1e-8, 1e-8, 0.0, 1, None)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-14)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-14, atol=1e-15)


def test_dopri5_harmonic_oscillator_accuracy():
    ts, ys, ks, _, status = kernels.dopri5(lambda t, y: np.array([y[1], -y[0]]), 0.0, np.pi, np.array([1.0, 0.0]),
                                           1e-11, 1e-11, 0.0, 100000, None)
    assert status == kernels.DONE
    np.testing.assert_allclose(ys[-1], [-1.0, 0.0], atol=1e-9)


def test_dense_output_matches_solution():
    ts, ys, ks, _, _ = kernels.dopri5(lambda t, y: -y, 0.0, 2.0, np.array([1.0]), 1e-11, 1e-11, 0.0, 100000, None)
    tq = np.linspace(0.0, 2.0, 37)
    np.testing.assert_allclose(kernels.dense_eval(ts, ys, ks, tq)[:, 0], np.exp(-tq), atol=1e-9)
    np.testing.assert_allclose(_kernels_py.dense_eval(ts, ys, ks, tq), compiled.dense_eval(ts, ys, ks, tq),
                               atol=1e-14)


def test_stop_callback_ends_early():
    ts, ys, ks, _, status = kernels.dopri5(lambda t, y: np.ones(1), 0.0, 5.0, np.zeros(1), 1e-9, 1e-9, 0.1,
                                           10000, lambda t, y: y[0] > 1.0)
    assert status == kernels.STOPPED
    assert ts[-1] < 5.0


def test_nonfinite_status():
    _, _, _, _, status = kernels.dopri5(lambda t, y: np.array([np.nan]), 0.0, 1.0, np.zeros(1), 1e-9, 1e-9, 0.0,
                                        100, None)
    assert status == kernels.NONFINITE


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=12, max_size=12), st.floats(0.05, 0.95), st.booleans())
def test_chatter_sup_backends_agree(vals, weight, relative):
    tt = np.linspace(0.0, 1.0, 7)
    hh = np.array(vals, float).reshape(6, 2)
    hh = np.vstack([hh, hh[:1]])
    inside = np.array([1, 0, 1, 1, 0, 0], dtype=np.int8)
    a = _kernels_py.chatter_sup(tt, hh, inside, weight, relative)
    b = compiled.chatter_sup(tt, hh, inside, weight, relative)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-14)
