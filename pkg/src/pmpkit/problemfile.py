"""JSON problem files and control files.

A problem file either names a catalog entry::

    {"version": 1, "catalog": "galerkin-heat:4", "seed": 3}

or spells the problem out: manifold, field (catalog id with parameters, or
a polynomial coefficient table), control set, horizon, cost, endpoint set,
start, guess and tolerances. Unknown fields are rejected.
"""

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from . import catalog
from .catalog import rotation_trace_cost, so3_right_field, sphere_rotation_field
from .constraints import set_from_dict
from .costs import AmbientLinearCost, LinearCost, QuadraticCost, ZeroCost
from .dynamics import Control, ControlSet, ControlSystemDef
from .errors import PMPError, ProblemFileError
from .geometry import Galerkin, get_manifold
from .problem import ProblemDef

VERSION = 1

_vec = {"type": "array", "items": {"type": "number"}}
_mat = {"type": "array", "items": _vec}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_control_set = {"oneOf": [
    _obj({"kind": {"const": "box"}, "lower": _vec, "upper": _vec}, ["kind", "lower", "upper"]),
    _obj({"kind": {"const": "ball"}, "dim": {"type": "integer", "minimum": 1},
          "radius": {"type": "number", "exclusiveMinimum": 0}}, ["kind", "dim"]),
    _obj({"kind": {"const": "finite"}, "points": {"type": "array"}}, ["kind", "points"]),
]}

_term = {"type": "array", "prefixItems": [{"type": "number"}, {"type": "array", "items": {"type": "integer", "minimum": 0}},
                                          {"type": "array", "items": {"type": "integer", "minimum": 0}}],
         "minItems": 3, "maxItems": 3}

_field = {"oneOf": [
    _obj({"catalog": {"enum": ["linear", "heat", "sphere-rotation", "so3-right"]},
          "params": {"type": "object"}}, ["catalog"]),
    _obj({"polynomial": {"type": "array", "items": {"type": "array", "items": _term}}}, ["polynomial"]),
]}

_cost = {"oneOf": [
    _obj({"kind": {"const": "zero"}}, ["kind"]),
    _obj({"kind": {"const": "linear"}, "start": _vec, "end": _vec, "chart": {"type": "string"}},
         ["kind", "start", "end"]),
    _obj({"kind": {"const": "quadratic"}, "goal": _vec, "weight": {"type": "number"},
          "chart": {"type": "string"}}, ["kind", "goal"]),
    _obj({"kind": {"const": "ambient_linear"}, "target": _vec, "sign": {"type": "number"},
          "chart": {"type": "string"}}, ["kind", "target"]),
    _obj({"kind": {"const": "rotation_trace"}, "goal": _vec}, ["kind", "goal"]),
]}

_set = _obj({
    "variant": {"enum": ["free", "fixed_start", "fixed_pair", "level", "sublevel"]},
    "kind": {"enum": ["affine", "sphere", "ball", "halfspace"]},
    "a": {}, "b": {}, "A": _mat, "start": _vec, "joint": {"type": "boolean"},
    "center": _vec, "radius": {"type": "number"},
}, ["variant"])

_guess = {"oneOf": [
    _obj({"intervals": {"type": "integer", "minimum": 1}, "value": _vec}, ["value"]),
    _obj({"grid": _vec, "values": _mat}, ["grid", "values"]),
]}

_common = {
    "version": {"const": VERSION},
    "name": {"type": "string"},
    "tol": {"type": "number", "exclusiveMinimum": 0},
    "residual_tol": {"type": "number", "exclusiveMinimum": 0},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "guess": _guess,
}

SCHEMA = {"oneOf": [
    _obj({**_common, "catalog": {"type": "string"}, "params": {"type": "object"}}, ["version", "catalog"]),
    _obj({**_common, "manifold": {"type": "string"}, "field": _field, "control_set": _control_set,
          "horizon": {"type": "number", "exclusiveMinimum": 0}, "cost": _cost, "endpoint_set": _set,
          "start": _obj({"coords": _vec, "chart": {"type": "string"}}, ["coords"])},
         ["version", "manifold", "field", "control_set", "horizon", "cost", "endpoint_set", "start"]),
]}


def _field_path(err):
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def _branch_error(err):
    """Error inside the ``oneOf`` branch the document was evidently aiming at.

    Branches are dropped when their discriminator does not match: a wrong
    ``kind`` const, or a required ``catalog``/``polynomial`` key that the
    document lacks. Of the rest, the one with the fewest errors wins.
    """
    branches = {}
    for e in err.context:
        branches.setdefault(e.relative_schema_path[0], []).append(e)

    def mismatched(errs):
        return any(e.validator == "const" or (e.validator == "required" and e.message.split("'")[1]
                                              in ("catalog", "polynomial")) for e in errs)

    keep = {k: v for k, v in branches.items() if not mismatched(v)} or branches
    errs = min(keep.values(), key=len)
    return jsonschema.exceptions.best_match(errs)


def _diagnose(doc):
    """Most specific schema error, naming the field."""
    errors = list(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc))
    if not errors:
        return None
    err = jsonschema.exceptions.best_match(errors)
    while err.context:
        err = _branch_error(err)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        base = _field_path(err)
        name = extra[0] if base == "<root>" else f"{base}.{extra[0]}"
        return ProblemFileError(f"unknown field {name!r}", field=name)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        base = _field_path(err)
        name = missing if base == "<root>" else f"{base}.{missing}"
        return ProblemFileError(f"missing field {name!r}", field=name)
    name = _field_path(err)
    return ProblemFileError(f"field {name!r}: {err.message}", field=name)


def parse(text):
    """Problem definition from problem-file text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ProblemFileError("problem file must hold a JSON object", field="<root>")
    if doc.get("version") != VERSION:
        raise ProblemFileError(f"field 'version' must be {VERSION}", field="version")
    err = _diagnose(doc)
    if err is not None:
        raise err
    try:
        return _build(doc)
    except ProblemFileError:
        raise
    except (KeyError, ValueError, TypeError, IndexError, PMPError) as exc:
        raise ProblemFileError(f"invalid problem: {exc}") from None


def load(path):
    return parse(Path(path).read_text(encoding="utf-8"))


def _section(name, fn, *args):
    try:
        return fn(*args)
    except ProblemFileError:
        raise
    except (KeyError, ValueError, TypeError, IndexError, PMPError) as exc:
        raise ProblemFileError(f"field {name!r}: {exc}", field=name) from None


def _build(doc):
    if "catalog" in doc:
        try:
            prob = catalog.get_problem(doc["catalog"], **doc.get("params", {}))
        except KeyError as exc:
            raise ProblemFileError(f"field 'catalog': {exc.args[0]}", field="catalog") from None
        except TypeError as exc:
            raise ProblemFileError(f"field 'params': {exc}", field="params") from None
        if "guess" in doc:
            prob.guess = _section("guess", _guess_control, doc["guess"], prob.horizon)
    else:
        m = _section("manifold", get_manifold, doc["manifold"])
        cs = _section("control_set", _control_set_of, doc["control_set"])
        horizon = float(doc["horizon"])
        f, fx, affine = _section("field", _field_of, doc["field"], m, cs)
        system = ControlSystemDef(m, f, fx, cs, horizon, control_affine=affine, name=doc.get("name", "problem"))
        cost = _section("cost", _cost_of, doc["cost"], m)
        S = _section("endpoint_set", set_from_dict, doc["endpoint_set"], m.dim)
        st = doc["start"]
        if len(st["coords"]) != m.dim:
            raise ProblemFileError(f"field 'start.coords': expected {m.dim} coordinates", field="start.coords")
        start = _section("start", m.point, st["coords"], st.get("chart"))
        guess = _section("guess", _guess_control, doc.get("guess", {"value": [0.0] * cs.dim}), horizon)
        prob = ProblemDef(system, cost, S, start, guess, name=doc.get("name", "problem"))
    for key in ("tol", "residual_tol", "seed"):
        if key in doc:
            setattr(prob, key, doc[key])
    if "name" in doc:
        prob.name = doc["name"]
    if prob.guess.dim != prob.system.control_set.dim:
        raise ProblemFileError("field 'guess': control dimension mismatch", field="guess")
    return prob


def _control_set_of(d):
    if d["kind"] == "box":
        return ControlSet.box(d["lower"], d["upper"])
    if d["kind"] == "ball":
        return ControlSet.ball(d["dim"], d.get("radius", 1.0))
    return ControlSet.finite(d["points"])


def _guess_control(d, horizon):
    if "grid" in d:
        u = Control(d["grid"], d["values"])
        if abs(u.horizon - horizon) > 1e-12 or u.grid[0] != 0.0:
            raise ValueError(f"guess grid must span [0, {horizon}]")
        return u
    return Control.constant(d["value"], horizon, d.get("intervals", catalog.INTERVALS))


def _cost_of(d, m):
    kind = d["kind"]
    if kind == "zero":
        return ZeroCost()
    if kind == "linear":
        return LinearCost(d["start"], d["end"], chart=d.get("chart"))
    if kind == "quadratic":
        return QuadraticCost(d["goal"], d.get("weight", 1.0), chart=d.get("chart"))
    if kind == "ambient_linear":
        return AmbientLinearCost(m, d["target"], sign=d.get("sign", -1.0), chart=d.get("chart"))
    return rotation_trace_cost(d["goal"])


def _field_of(d, m, cs):
    """``(field, field_x, control_affine)`` from a field section."""
    if "polynomial" in d:
        return polynomial_field(d["polynomial"], m.dim, cs.dim) + (polynomial_affine(d["polynomial"]),)
    name, params = d["catalog"], d.get("params", {})
    if name == "linear":
        A = np.array(params["A"], float).reshape(m.dim, m.dim)
        B = np.array(params["B"], float).reshape(m.dim, cs.dim)
        return (lambda t, c, x, u: A @ x + B @ u), (lambda t, c, x, u: A), True
    if name == "heat":
        if not isinstance(m, Galerkin):
            raise ValueError("field 'heat' needs a galerkin manifold")
        lam, b = m.decay, 1.0 / m.modes
        A = -np.diag(lam)
        return (lambda t, c, x, u: -lam * x + b * u[0]), (lambda t, c, x, u: A), True
    if name == "sphere-rotation":
        if m.name != "sphere2" or cs.dim != 3:
            raise ValueError("field 'sphere-rotation' needs sphere2 and 3-dimensional controls")
        return sphere_rotation_field(m) + (True,)
    if m.name != "so3" or cs.dim != 3:
        raise ValueError("field 'so3-right' needs so3 and 3-dimensional controls")
    return so3_right_field() + (True,)


def polynomial_field(table, n, m):
    """Field from ``table[i] = [[coef, x_exponents, u_exponents], ...]`` per component."""
    if len(table) != n:
        raise ValueError(f"polynomial table has {len(table)} components, manifold has {n}")
    terms = []
    for i, comp in enumerate(table):
        for coef, ex, eu in comp:
            ex = np.zeros(n, int) if not ex else np.asarray(ex, int)
            eu = np.zeros(m, int) if not eu else np.asarray(eu, int)
            if ex.size != n or eu.size != m:
                raise ValueError(f"component {i}: exponent lengths must be {n} and {m}")
            terms.append((i, float(coef), ex, eu))

    def field(t, c, x, u):
        out = np.zeros(n)
        for i, coef, ex, eu in terms:
            out[i] += coef * np.prod(x ** ex) * np.prod(np.asarray(u, float) ** eu)
        return out

    def field_x(t, c, x, u):
        out = np.zeros((n, n))
        for i, coef, ex, eu in terms:
            cu = coef * np.prod(np.asarray(u, float) ** eu)
            for j in np.flatnonzero(ex):
                e = ex.copy()
                e[j] -= 1
                out[i, j] += cu * ex[j] * np.prod(x ** e)
        return out

    return field, field_x


def polynomial_affine(table):
    return all(sum(eu) <= 1 for comp in table for _, _, eu in comp)


# control files ----------------------------------------------------------------


def load_control(path):
    """Control from a JSON ``{"grid", "values"}`` file or a solver control CSV."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".csv":
        rows = list(csv.reader(text.splitlines()))
        if not rows or rows[0][:2] != ["a", "b"]:
            raise ProblemFileError("control CSV needs header a,b,u1,...", field="a")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
        except ValueError as exc:
            raise ProblemFileError(f"control CSV: {exc}") from None
        return Control(np.concatenate([data[:, 0], data[-1:, 1]]), data[:, 2:])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    extra = sorted(set(doc) - {"version", "grid", "values"})
    if extra:
        raise ProblemFileError(f"unknown field {extra[0]!r}", field=extra[0])
    for key in ("grid", "values"):
        if key not in doc:
            raise ProblemFileError(f"missing field {key!r}", field=key)
    try:
        return Control(doc["grid"], doc["values"])
    except ValueError as exc:
        raise ProblemFileError(f"field 'values': {exc}", field="values") from None
