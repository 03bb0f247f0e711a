"""Command-line front end: ``aderdg <command> [options]``.

Every command writes CSV (to ``--out`` or stdout).  Exit codes: 0 success,
2 usage error, 3 numerical failure; error lines start with ``error:``.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import experiments as ex
from . import vonneumann as vn
from .flux import get_flux
from .geometry import GeometryError, MovingMesh
from .kernels import KernelError
from .refbasis import assemble_reference_matrices


class UsageError(Exception):
    pass


NUMERIC_ERRORS = (
    ArithmeticError,
    np.linalg.LinAlgError,
    KernelError,
    vn.SearchError,
    ex.ConvergenceError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- argument parsing helpers ------------------------------------------------------------


def parse_int_list(text: str) -> list[int]:
    """``"1..9"``, ``"1,3,5"`` or ``"4"``."""
    out = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        if ".." in part:
            a, b = part.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def parse_float_list(text: str) -> list[float]:
    """``"0.05,0.1"`` or ``"start:stop:step"`` (inclusive stop)."""
    out = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        if part.count(":") == 2:
            a, b, h = (float(v) for v in part.split(":"))
            if h <= 0:
                raise ValueError("range step must be positive")
            n = int(np.floor((b - a) / h + 1e-9)) + 1
            out.extend(float(np.round(a + k * h, 12)) for k in range(n))
        else:
            out.append(float(part))
    return out


def read_config(path: str) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def _write(path, header, rows):
    if path in (None, "-"):
        vn.write_csv(sys.stdout, header, rows)
    else:
        vn.write_csv(path, header, rows)


def _map(fn, items, threads):
    """Ordered map, optionally over a process pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_n(ns, lo=0):
    if not ns:
        raise UsageError("empty N list")
    bad = [n for n in ns if not lo <= n <= 9]
    if bad:
        raise UsageError(f"N must lie in {lo}..9, got {bad}")


def _check_deltas(ds):
    bad = [d for d in ds if not 0.0 <= d <= 0.5]
    if bad:
        raise UsageError(f"delta must lie in [0, 0.5], got {bad}")


def _scan_params(args, delta=0.0):
    return vn.ScanParams(
        theta_grid=args.theta_samples,
        cfl_min=args.cfl_min,
        cfl_max=args.cfl_max,
        cfl_points=args.cfl_points,
        velocity=getattr(args, "velocity", 0.0),
        delta=delta,
        spacing=args.cfl_spacing,
    )


# --- commands ------------------------------------------------------------------------------


def _threshold_row(job):
    N, variant, epsilon, params = job
    if epsilon is None:
        epsilon = vn.practical_epsilon(N, params, variant) if N >= 4 else 0.0
    c = vn.cfl_threshold_search(N, variant, epsilon, params)
    return {"N": N, "variant": variant, "epsilon": float(epsilon), "cfl_threshold": c}


def cmd_cfl_table(args):
    ns = parse_int_list(args.n)
    _check_n(ns, 1)
    if args.variant not in vn.VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}")
    _check_deltas([args.delta])
    params = _scan_params(args, args.delta)
    jobs = [(N, args.variant, args.epsilon, params) for N in ns]
    rows = _map(_threshold_row, jobs, args.threads)
    _write(args.out, ["N", "variant", "epsilon", "cfl_threshold"], rows)


def _map_rows(job):
    N, deltas, cfls, variant, eps, params = job
    if eps is None:
        eps = vn.practical_epsilon(N, params) if N >= 4 and variant.startswith("explicit") else 0.0
    return vn.stability_map(N, deltas, cfls, variant, eps, params)


def cmd_stability_map(args):
    ns = parse_int_list(args.n)
    _check_n(ns, 1)
    deltas = parse_float_list(args.deltas)
    if not deltas:
        raise UsageError("empty delta grid")
    _check_deltas(deltas)
    if args.variant not in ("explicit-sliver", "implicit-sliver"):
        raise UsageError("stability-map variants: explicit-sliver, implicit-sliver")
    params = _scan_params(args)
    jobs = []
    for N in ns:
        if args.cfls:
            cfls = parse_float_list(args.cfls)
        elif args.variant == "implicit-sliver":
            cfls = list(np.round(np.linspace(0.5, 10.0, 20), 12))
        else:
            cfls = [float(np.round(f * vn.CFL_MAX[N], 12)) for f in np.arange(1, 16) / 10]
        if not cfls or min(cfls) <= 0:
            raise UsageError("CFL values must be positive")
        jobs.append((N, deltas, cfls, args.variant, args.epsilon, params))
    rows = [r for part in _map(_map_rows, jobs, args.threads) for r in part]
    _write(args.out, ["N", "delta", "CFL", "max_rho", "verdict"], rows)


def _scan_rows(job):
    N, cfls, variant, params = job
    out = []
    for c in cfls:
        r = vn.scan_max_rho(N, c, params, variant)
        out.append({"N": N, "CFL": c, "max_rho": r.max_rho, "argmax_theta": r.argmax_theta})
    return out


def cmd_scan(args):
    ns = parse_int_list(args.n)
    _check_n(ns, 0)
    if args.variant not in vn.VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}")
    _check_deltas([args.delta])
    params = _scan_params(args, args.delta)
    cfls = parse_float_list(args.cfls) if args.cfls else list(params.cfls())
    if not cfls or min(cfls) <= 0:
        raise UsageError("CFL values must be positive")
    rows = [r for part in _map(_scan_rows, [(N, cfls, args.variant, params) for N in ns], args.threads) for r in part]
    _write(args.out, ["N", "CFL", "max_rho", "argmax_theta"], rows)


INITIAL = {
    "gaussian": lambda x: np.exp(-np.asarray(x) ** 2),
    "constant": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "sine": lambda x: np.sin(np.pi * np.asarray(x) / 6.0),
}


def cmd_solve(args):
    if args.scheme not in ex.SCHEMES:
        raise UsageError(f"unknown scheme {args.scheme!r}")
    if not 0 <= args.n <= 9:
        raise UsageError("N must lie in 0..9")
    if args.initial not in INITIAL:
        raise UsageError(f"unknown initial condition {args.initial!r}")
    if args.ne < 2:
        raise UsageError("need at least two elements")
    _check_deltas([args.delta])
    if args.steps is None and args.final_time is None:
        raise UsageError("give --steps or --final-time")
    try:
        flux = get_flux(args.flux, args.speed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    a, b = args.domain
    dx = (b - a) / args.ne
    if args.cfl is not None:
        if args.cfl <= 0:
            raise UsageError("CFL must be positive")
        dt = args.cfl * dx / max(abs(args.speed), 1e-300)
    else:
        dt = ex.default_dt(args.scheme, args.n, dx, args.speed)
    periodic = args.boundary == "periodic"
    try:
        mesh = MovingMesh.uniform(a, b, args.ne, dt, velocity=args.velocity, periodic=periodic)
    except GeometryError as exc:
        raise UsageError(str(exc)) from None
    f0 = INITIAL[args.initial]
    if args.initial == "gaussian" and periodic:
        f0 = ex.periodic_gaussian(a, b, args.speed)
    u0 = ex.project_initial(f0, mesh.nodes_old, args.n)
    res = ex.evolve(
        u0, mesh, flux, args.scheme,
        final_time=args.final_time, n_steps=args.steps if args.final_time is None else None,
        delta=args.delta, pattern=args.pattern,
    )
    exact = None
    if flux.is_linear and args.initial == "gaussian" and periodic:
        g = ex.periodic_gaussian(a, b, args.speed)
        exact = lambda x: g(x, res.time)  # noqa: E731
    elif flux.is_linear and args.initial == "constant":
        exact = INITIAL["constant"]
    rows = []
    for k, (t, m, e) in enumerate(zip(res.times, res.mass, res.energy)):
        rows.append({"step": k, "time": t, "mass": m, "energy": e, "mass_drift": m - res.mass[0]})
    err = ex.l2_error(res.u, exact, res.nodes) if exact is not None else float("nan")
    rows[-1]["l2_error"] = err
    for r in rows[:-1]:
        r["l2_error"] = ""
    _write(args.out, ["step", "time", "mass", "energy", "mass_drift", "l2_error"], rows)
    if args.samples:
        x, _, _ = ex._cell_points(res.nodes, args.n + 1)
        vals = ex.evaluate(res.u, res.nodes, x)
        ref = exact(x) if exact is not None else np.full_like(x, np.nan)
        srows = [{"x": xi, "u": ui, "exact": ri} for xi, ui, ri in zip(x.ravel(), vals.ravel(), ref.ravel())]
        _write(args.samples, ["x", "u", "exact"], srows)


def cmd_convergence(args):
    if args.scheme not in ex.SCHEMES:
        raise UsageError(f"unknown scheme {args.scheme!r}")
    ns = parse_int_list(args.n)
    _check_n(ns, 0)
    _check_deltas([args.delta])
    ne = tuple(parse_int_list(args.ne))
    if len(ne) < 2:
        raise UsageError("need at least two element counts")
    try:
        cases = [ex.ConvergenceCase(args.scheme, N, ne, delta=args.delta, pattern=args.pattern, final_time=args.final_time) for N in ns]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    reports = _map(ex.run_convergence, cases, args.threads)
    _write(args.out, ex.CONVERGENCE_HEADER, [r for rep in reports for r in rep.rows()])


def cmd_dump_matrices(args):
    ns = parse_int_list(args.n)
    _check_n(ns, 0)
    rows = []
    for N in ns:
        if args.cfl is None:
            mats = assemble_reference_matrices(N).as_dict()
        else:
            if args.cfl <= 0:
                raise UsageError("CFL must be positive")
            A = vn.amplification(args.variant, N, args.cfl, np.array([args.theta]), args.delta, args.velocity)[0]
            mats = {"A_real": A.real, "A_imag": A.imag}
        for name, M in mats.items():
            M = np.atleast_2d(M)
            for i in range(M.shape[0]):
                for j in range(M.shape[1]):
                    rows.append({"N": N, "matrix": name, "i": i, "j": j, "value": float(M[i, j])})
    _write(args.out, ["N", "matrix", "i", "j", "value"], rows)


# --- parser --------------------------------------------------------------------------------


def _add_scan_options(p):
    p.add_argument("--theta-samples", type=int, default=1001)
    p.add_argument("--cfl-min", type=float, default=vn.ScanParams.cfl_min)
    p.add_argument("--cfl-max", type=float, default=vn.ScanParams.cfl_max)
    p.add_argument("--cfl-points", type=int, default=vn.ScanParams.cfl_points)
    p.add_argument("--cfl-spacing", choices=("log", "linear"), default=vn.ScanParams.spacing)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default="-", help="output CSV path ('-' for stdout)")
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    parser = _Parser(prog="aderdg", description="ADER-DG stability analysis and solvers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cfl-table", parents=[common], help="CFL thresholds per degree")
    p.add_argument("--n", default="1..9")
    p.add_argument("--variant", default="explicit")
    p.add_argument("--epsilon", type=float, default=None, help="fixed overshoot; default: 0 for N<=3, computed plateau for N>=4")
    p.add_argument("--delta", type=float, default=0.0)
    _add_scan_options(p)
    p.set_defaults(func=cmd_cfl_table)

    p = sub.add_parser("stability-map", parents=[common], help="(delta, CFL) verdict grid")
    p.add_argument("--n", default="3")
    p.add_argument("--variant", default="explicit-sliver")
    p.add_argument("--deltas", default="0.05:0.45:0.05")
    p.add_argument("--cfls", default=None)
    p.add_argument("--epsilon", type=float, default=None)
    _add_scan_options(p)
    p.set_defaults(func=cmd_stability_map)

    p = sub.add_parser("scan", parents=[common], help="max_rho versus CFL")
    p.add_argument("--n", default="1")
    p.add_argument("--variant", default="explicit")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--velocity", type=float, default=0.0)
    p.add_argument("--cfls", default=None)
    _add_scan_options(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("solve", parents=[common], help="run the solver")
    p.add_argument("--scheme", default="explicit")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--ne", type=int, default=64)
    p.add_argument("--domain", type=float, nargs=2, default=(-6.0, 6.0))
    p.add_argument("--flux", default="lae")
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--cfl", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--final-time", type=float, default=None)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--pattern", default="interior", choices=("none", "interior", "every-other"))
    p.add_argument("--velocity", type=float, default=0.0)
    p.add_argument("--initial", default="gaussian")
    p.add_argument("--boundary", default="periodic", choices=("periodic", "zero"))
    p.add_argument("--samples", default=None, help="CSV path for final solution samples")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", parents=[common], help="L2 convergence study")
    p.add_argument("--scheme", default="explicit")
    p.add_argument("--n", default="1")
    p.add_argument("--ne", default="32,64,128")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--pattern", default="interior", choices=("interior", "every-other"))
    p.add_argument("--final-time", type=float, default=1.0)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("dump-matrices", parents=[common], help="reference or amplification matrices")
    p.add_argument("--n", default="1")
    p.add_argument("--cfl", type=float, default=None, help="dump A(CFL, theta) instead of the reference matrices")
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--variant", default="explicit")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--velocity", type=float, default=0.0)
    p.set_defaults(func=cmd_dump_matrices)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults so flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in cfg.items():
        if k not in known or k in ("config", "help"):
            raise UsageError(f"unknown config key {k!r} for {args.command}")
        act = known[k]
        try:
            if act.nargs in (2, "+", "*"):
                defaults[k] = [act.type(x) if act.type else x for x in v.split()]
            else:
                defaults[k] = act.type(v) if act.type else v
        except ValueError:
            raise UsageError(f"bad value for {k!r}: {v!r}") from None
        if act.choices is not None and defaults[k] not in act.choices:
            raise UsageError(f"invalid choice for {k!r}: {v!r}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
