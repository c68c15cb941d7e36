"""Command-line front end.

Exit codes: 0 pass, 1 certificate fail, 2 parse error, 3 numerical failure.
"""

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import catalog, problemfile
from .adjoint import audit_costate, read_path_csv
from .dynamics import Control, fmt, integrate
from .errors import PMPError, ProblemFileError
from .lagrangian import build_lagrangian_chart, reduce
from .relaxed import ControlPair, chattering_error, chattering_partition
from .solver import SolverConfig, solve
from .variations import DEFAULT_LAMBDAS, VariationSpec, approximate_variation, fit_slope, \
    linear_rate_certificate, second_order_certificate

EXIT_PASS, EXIT_FAIL, EXIT_PARSE, EXIT_NUMERIC = 0, 1, 2, 3

DESCRIPTIONS = {
    "bang1d": "x' = u on [-1, 1], minimize x(1) from x(0) = 0",
    "double-integrator": "x'' = u on [-1, 1], rest to rest, maximize x1(2)",
    "sphere-geodesic": "rotate the south pole toward a target on the unit sphere",
    "rigid-body": "steer a rotation toward a goal with bounded angular velocity",
    "galerkin-heat:n": "n heat modes x_k' = -k^2 x_k + u / k, quadratic terminal tracking",
    "frozen-toy": "x2 is frozen and constrained; abnormal extremal",
}


class _ParseFailure(Exception):
    pass


def _problem(spec, args):
    """Problem from a file path or a catalog name, with command-line overrides."""
    p = Path(spec)
    try:
        prob = problemfile.load(p) if p.exists() else problemfile.parse(f'{{"version": 1, "catalog": "{spec}"}}')
    except ProblemFileError as exc:
        raise _ParseFailure(str(exc)) from None
    if args.tol is not None:
        prob.tol = args.tol
    if args.seed is not None:
        prob.seed = args.seed
    return prob


def _emit(args, name, text):
    """Write ``text`` to ``--out/name`` or standard output."""
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _control(args, prob):
    if not getattr(args, "control", None):
        return prob.guess
    try:
        u = problemfile.load_control(args.control)
    except (OSError, ProblemFileError) as exc:
        raise _ParseFailure(str(exc)) from None
    if u.dim != prob.system.control_set.dim or abs(u.horizon - prob.horizon) > 1e-12:
        raise _ParseFailure("control file: dimension or horizon does not match the problem")
    return u


def cmd_simulate(args):
    prob = _problem(args.problem, args)
    traj = integrate(prob.system, prob.start, _control(args, prob), prob.tol)
    _emit(args, "trajectory.csv", traj.to_csv())
    return EXIT_PASS


def _integrand(spec, k):
    """Per-atom integrands: ``const:a,b,...`` or ``sin`` (``sin(2 pi (i + 1) t)``)."""
    if spec == "sin":
        return [lambda t, i=i: np.sin(2 * np.pi * (i + 1) * t) for i in range(k)]
    kind, _, vals = spec.partition(":")
    if kind != "const":
        raise _ParseFailure(f"--integrand: unknown kind {kind!r}")
    try:
        c = [float(v) for v in vals.split(",")]
    except ValueError:
        raise _ParseFailure("--integrand: constants must be numbers") from None
    if len(c) != k:
        raise _ParseFailure(f"--integrand: need {k} constants")
    return [lambda t, v=v: v for v in c]


def _floats(text, flag):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise _ParseFailure(f"{flag}: expected comma-separated numbers") from None


def cmd_chatter(args):
    weights = _floats(args.weights, "--weights")
    h = _integrand(args.integrand, len(weights))
    r_max = args.budget or 256
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["r", "diameter", "atom", "error"])
    rs, worst = [], []
    r = args.r_min
    while r <= r_max:
        part = chattering_partition(weights, r, args.horizon)
        errs = chattering_error(h, weights, part)
        for atom, e in zip(part.kept, errs):
            w.writerow([r, fmt(part.diameter), atom + 1, fmt(e)])
        rs.append(r)
        worst.append(float(np.max(errs)))
        r *= 2
    w.writerow(["slope", fmt(fit_slope(1.0 / np.array(rs, float), worst)), "", ""])
    _emit(args, "chatter.csv", out.getvalue())
    return EXIT_PASS


def _pair(prob, u):
    traj = integrate(prob.system, prob.start, u, prob.tol)
    rs = reduce(prob.system, build_lagrangian_chart(prob.system, traj))
    return rs, ControlPair.from_point(rs, prob.start, u, prob.tol)


def _spec(args, prob, pair):
    n = prob.system.manifold.dim
    cs = prob.system.control_set
    nu = cs.samples(1, prob.seed)[0] if args.nu is None else np.array(_floats(args.nu, "--nu"))
    if nu.size != cs.dim or not cs.contains(nu, 1e-12):
        raise _ParseFailure("--nu: value outside the control set")
    return VariationSpec(np.zeros(n), Control.constant(nu, prob.horizon))


def rho_rows(pair, spec, rs, lambdas, eps=1e-3):
    """``(lambda, rho, realization error)`` rows, starting with ``lambda = 0``."""
    rows = [(0.0, 0.0, 0.0)]
    for lam in lambdas:
        _, err, rho = approximate_variation(pair, spec, lam, eps, rs)
        rows.append((lam, rho, err))
    return rows


def cmd_certify(args):
    prob = _problem(args.problem, args)
    rs, pair = _pair(prob, _control(args, prob))
    spec = _spec(args, prob, pair)
    if args.which == "linear":
        cert = linear_rate_certificate(pair, spec, rs)
    elif args.which == "second":
        cert = second_order_certificate(pair, spec, rs)
    else:
        rows = rho_rows(pair, spec, rs, DEFAULT_LAMBDAS)
        lams = np.array([r[0] for r in rows])
        rhos = np.array([r[1] for r in rows])
        slope, intercept = np.polyfit(lams, rhos, 1)
        ok = bool(slope >= 0 and intercept <= 1e-3 and rows[0][1] == 0.0)
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["lambda", "rho", "error", "fit"])
        for lam, rho, err in rows:
            w.writerow([fmt(lam), fmt(rho), fmt(err), fmt(intercept + slope * lam)])
        w.writerow(["slope", fmt(slope), fmt(intercept), "true" if ok else "false"])
        _emit(args, "certificate.csv", out.getvalue())
        return EXIT_PASS if ok else EXIT_FAIL
    _emit(args, "certificate.csv", cert.to_csv())
    return EXIT_PASS if cert.passed else EXIT_FAIL


def cmd_solve(args):
    prob = _problem(args.problem, args)
    config = SolverConfig()
    if args.budget:
        config.probe_budget = args.budget
    report = solve(prob, config)
    if args.out:
        report.write(args.out)
    else:
        sys.stdout.write(report.text())
    return EXIT_PASS if report.passed else EXIT_FAIL


def _lambda0(run, override):
    if override is not None:
        return override
    report = run / "report.txt"
    if report.exists():
        for line in report.read_text(encoding="utf-8").splitlines():
            if line.startswith("lambda0:"):
                return int(line.split(":")[1])
    return 1


def cmd_verify(args):
    prob = _problem(args.problem, args)
    run = Path(args.run)
    try:
        u = problemfile.load_control(run / "control.csv")
        costate_rows = read_path_csv((run / "costate.csv").read_text(encoding="utf-8"))
        traj_file = run / "trajectory.csv"
        state_rows = read_path_csv(traj_file.read_text(encoding="utf-8")) if traj_file.exists() else None
    except (OSError, ValueError, IndexError, ProblemFileError) as exc:
        raise _ParseFailure(f"run directory: {exc}") from None
    traj = integrate(prob.system, prob.start, u, prob.tol)
    try:
        audit = audit_costate(prob.system, traj, costate_rows, _lambda0(run, args.lambda0), prob.cost,
                              prob.endpoint_set, prob.residual_tol, prob.seed, state_rows)
    except ValueError as exc:
        raise _ParseFailure(f"costate rows: {exc}") from None
    _emit(args, "verify.txt", audit.report())
    return EXIT_PASS if audit.passed else EXIT_FAIL


def cmd_catalog(args):
    if not args.name:
        _emit(args, "catalog.txt", "".join(f"{n}: {DESCRIPTIONS[n]}\n" for n in catalog.names()))
        return EXIT_PASS
    try:
        catalog.get_problem(args.name)
    except (KeyError, ValueError) as exc:
        raise _ParseFailure(f"catalog: {exc}") from None
    text = f'{{\n  "version": 1,\n  "catalog": "{args.name}",\n  "seed": {args.seed or 0}\n}}\n'
    _emit(args, f"{args.name.replace(':', '-')}.json", text)
    return EXIT_PASS


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: standard output)")
    common.add_argument("--tol", type=float, help="integration tolerance")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--budget", type=int, help="probe budget (solve) or largest block count (chatter)")

    parser = argparse.ArgumentParser(prog="pmpkit", description="Maximum-principle certificates on manifolds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="integrate a control")
    p.add_argument("problem", help="problem file or catalog name")
    p.add_argument("--control", help="control file (.json or .csv); default: the problem's guess")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("chatter", parents=[common], help="chattering convergence study")
    p.add_argument("--weights", default="0.5,0.5")
    p.add_argument("--integrand", default="const:1,-1", help="const:a,b,... or sin")
    p.add_argument("--r-min", type=int, default=4)
    p.add_argument("--horizon", type=float, default=1.0)
    p.set_defaults(func=cmd_chatter)

    p = sub.add_parser("certify", parents=[common], help="rate certificates along a variation")
    p.add_argument("problem")
    p.add_argument("--which", choices=["linear", "second", "rho"], default="linear")
    p.add_argument("--control", help="control of the base pair")
    p.add_argument("--nu", help="constant variation control, comma-separated")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("solve", parents=[common], help="penalized descent and certificate")
    p.add_argument("problem")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", parents=[common], help="check a control and costate from a run directory")
    p.add_argument("problem")
    p.add_argument("run", help="directory with control.csv, costate.csv and optionally trajectory.csv")
    p.add_argument("--lambda0", type=int, choices=[0, 1])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("catalog", parents=[common], help="list built-ins or write a problem file")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ParseFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (PMPError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
