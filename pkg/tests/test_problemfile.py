import json

import numpy as np
import pytest

from pmpkit import problemfile
from pmpkit.constraints import FixedPair, LevelSet
from pmpkit.dynamics import integrate
from pmpkit.errors import ProblemFileError

EXPLICIT = {
    "version": 1,
    "name": "explicit",
    "manifold": "euclidean:2",
    "field": {"catalog": "linear", "params": {"A": [[0, 1], [0, 0]], "B": [[0], [1]]}},
    "control_set": {"kind": "box", "lower": [-1], "upper": [1]},
    "horizon": 2.0,
    "cost": {"kind": "linear", "start": [0, 0], "end": [-1, 0]},
    "endpoint_set": {"variant": "level", "kind": "affine", "A": [[0, 1]], "b": [0], "start": [-1, 0]},
    "start": {"coords": [-1, 0]},
    "guess": {"intervals": 8, "value": [0.5]},
    "seed": 4,
}


def _parse(doc):
    return problemfile.parse(json.dumps(doc))


def _error(doc_or_text):
    text = doc_or_text if isinstance(doc_or_text, str) else json.dumps(doc_or_text)
    with pytest.raises(ProblemFileError) as info:
        problemfile.parse(text)
    return info.value


def test_catalog_entry():
    prob = _parse({"version": 1, "catalog": "galerkin-heat:4", "seed": 3, "tol": 1e-8})
    assert prob.system.manifold.dim == 4
    assert prob.seed == 3 and prob.tol == 1e-8


def test_catalog_params():
    prob = _parse({"version": 1, "catalog": "double-integrator", "params": {"horizon": 3.0}})
    assert prob.horizon == 3.0


def test_explicit_problem():
    prob = _parse(EXPLICIT)
    assert prob.name == "explicit" and prob.seed == 4
    assert isinstance(prob.endpoint_set, LevelSet)
    assert prob.guess.grid.size == 9
    assert prob.system.control_affine
    traj = prob.simulate()
    # x1 = -1 + t^2 / 4, x2 = t / 2
    np.testing.assert_allclose(traj.end.coords, [0.0, 1.0], atol=1e-9)


def test_load_from_disk(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(EXPLICIT), encoding="utf-8")
    prob = problemfile.load(path)
    assert prob.horizon == 2.0


def test_unknown_field_named():
    err = _error({**EXPLICIT, "colour": "red"})
    assert err.field == "colour" and "colour" in str(err)


def test_missing_field_named():
    doc = dict(EXPLICIT)
    del doc["horizon"]
    err = _error(doc)
    assert err.field == "horizon" and "horizon" in str(err)


def test_wrong_version():
    assert _error({**EXPLICIT, "version": 2}).field == "version"


def test_bad_type_named():
    err = _error({**EXPLICIT, "horizon": "long"})
    assert "horizon" in str(err)


def test_json_syntax_line():
    err = _error('{"version": 1,\n "catalog": }')
    assert "line 2" in str(err)


def test_not_an_object():
    assert _error("[1, 2]").field == "<root>"


def test_unknown_catalog():
    assert _error({"version": 1, "catalog": "nope"}).field == "catalog"


def test_start_dimension():
    err = _error({**EXPLICIT, "start": {"coords": [0.0]}})
    assert err.field == "start.coords"


def test_guess_dimension():
    err = _error({**EXPLICIT, "guess": {"value": [0.0, 1.0]}})
    assert err.field == "guess"


def test_field_manifold_mismatch():
    doc = {**EXPLICIT, "field": {"catalog": "heat"}}
    assert _error(doc).field == "field"


def test_fixed_pair_section():
    doc = {**EXPLICIT, "endpoint_set": {"variant": "fixed_pair", "a": [-1, 0], "b": [0, 0]}}
    S = _parse(doc).endpoint_set
    assert isinstance(S, FixedPair)
    np.testing.assert_array_equal(S.b, [0.0, 0.0])


def test_polynomial_field():
    # x1' = x2, x2' = -x1^3 + u
    table = [[[1.0, [0, 1], [0]]], [[-1.0, [3, 0], [0]], [1.0, [0, 0], [1]]]]
    prob = _parse({**EXPLICIT, "field": {"polynomial": table}})
    sys = prob.system
    assert sys.control_affine
    x, u = np.array([0.5, -2.0]), np.array([0.3])
    np.testing.assert_allclose(sys.field(0.0, "identity", x, u), [-2.0, -0.125 + 0.3])
    np.testing.assert_allclose(sys.field_x(0.0, "identity", x, u), [[0.0, 1.0], [-0.75, 0.0]])


def test_polynomial_field_x_matches_differences():
    table = [[[2.0, [1, 1], [1]], [0.5, [2, 0], [0]]], [[-1.0, [0, 3], [2]]]]
    f, fx = problemfile.polynomial_field(table, 2, 1)
    assert not problemfile.polynomial_affine(table)
    x, u, h = np.array([0.7, -0.4]), np.array([0.9]), 1e-6
    num = np.column_stack([(f(0, "", x + h * e, u) - f(0, "", x - h * e, u)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(fx(0, "", x, u), num, atol=1e-8)


def test_polynomial_shape_error():
    with pytest.raises(ValueError):
        problemfile.polynomial_field([[[1.0, [1], [0]]]], 2, 1)


def test_control_json_and_csv(tmp_path):
    j = tmp_path / "u.json"
    j.write_text(json.dumps({"grid": [0, 0.5, 1], "values": [[1], [-1]]}), encoding="utf-8")
    u = problemfile.load_control(j)
    assert u(0.25)[0] == 1.0 and u(0.75)[0] == -1.0
    c = tmp_path / "u.csv"
    c.write_text("a,b,u1\n0,0.5,1\n0.5,1,-1\n", encoding="utf-8")
    v = problemfile.load_control(c)
    np.testing.assert_array_equal(v.grid, u.grid)
    np.testing.assert_array_equal(v.values, u.values)


def test_control_file_errors(tmp_path):
    j = tmp_path / "u.json"
    j.write_text(json.dumps({"grid": [0, 1]}), encoding="utf-8")
    with pytest.raises(ProblemFileError, match="values"):
        problemfile.load_control(j)
    j.write_text(json.dumps({"grid": [0, 1], "values": [[0]], "x": 1}), encoding="utf-8")
    with pytest.raises(ProblemFileError, match="'x'"):
        problemfile.load_control(j)


def test_guess_grid_round_trip():
    prob = _parse({"version": 1, "catalog": "bang1d", "guess": {"grid": [0, 0.25, 1], "values": [[1], [0]]}})
    traj = integrate(prob.system, prob.start, prob.guess)
    assert traj.end.coords[0] == pytest.approx(0.25)
