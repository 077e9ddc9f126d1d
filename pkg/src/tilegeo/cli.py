"""Command-line interface: ``tilegeo simulate | fit | predict | bench``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time

import numpy as np

from .errors import DomainError, FitError, SingularMatrixError, TilegeoError
from .geometry import DistanceMetric, grid_locations, random_locations, read_csv, write_csv
from .kernel import MaternParams, ParamBounds
from .kriging import krige, krige_with_trend
from .likelihood import (
    DEFAULT_TILE_SIZE,
    ComputeBackend,
    GaussianField,
    LikelihoodEvaluator,
    detrend_linear,
    fit_mle,
)
from .optimizer import OptimizerConfig
from .simulate import SimulationSpec, simulate_at
from .tiles import MatrixMode

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _float_list(text, count=None):
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if count is not None and len(values) != count:
        raise argparse.ArgumentTypeError(f"expected {count} values, got {text!r}")
    return values


def _int_list(text):
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _metric(text):
    try:
        return DistanceMetric.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _bounds3(text):
    return _float_list(text, 3)


def _add_runtime(p):
    g = p.add_argument_group("runtime")
    g.add_argument("--workers", type=int, default=1, help="worker threads (ncores)")
    g.add_argument("--ts", type=int, default=DEFAULT_TILE_SIZE, help="tile size")
    g.add_argument("--pgrid", type=int, default=1, help="process grid rows (must be 1)")
    g.add_argument("--qgrid", type=int, default=1, help="process grid columns (must be 1)")


def _add_compute(p):
    g = p.add_argument_group("backend")
    g.add_argument("--compute", choices=("exact", "dst", "tlr"), default="exact")
    g.add_argument("--tlr-accuracy", type=float, default=1e-9,
                   help="relative Frobenius accuracy of TLR tiles")
    g.add_argument("--dst-bandwidth", type=int, default=1,
                   help="number of off-diagonal tile bands kept by DST")


def _add_params(p, required):
    g = p.add_argument_group("Matérn parameters")
    g.add_argument("--sigma-sq", type=float, required=required, help="variance")
    g.add_argument("--beta", type=float, required=required, help="spatial range")
    g.add_argument("--nu", type=float, required=required, help="smoothness")


def _add_optim(p):
    g = p.add_argument_group("optimisation")
    g.add_argument("--clb", type=_bounds3, default=[0.001, 0.001, 0.001],
                   help="lower bounds sigma_sq,beta,nu (also the starting point)")
    g.add_argument("--cub", type=_bounds3, default=[5.0, 5.0, 5.0],
                   help="upper bounds sigma_sq,beta,nu")
    g.add_argument("--tol", type=float, default=1e-4, help="absolute log-likelihood tolerance")
    g.add_argument("--max-iters", type=int, default=0,
                   help="maximum likelihood evaluations (0 = unlimited)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilegeo",
        description="Matérn Gaussian random fields: simulation, tiled maximum likelihood, kriging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a field and write x,y,z CSV")
    p.add_argument("--n", type=int, help="number of random locations on the unit square")
    p.add_argument("--grid", type=_int_list, metavar="NX,NY",
                   help="regular grid on (0,1]^2 instead of random locations")
    p.add_argument("--locations", help="CSV with x,y columns to simulate at")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dmetric", type=_metric, default=DistanceMetric.parse("euclidean"),
                   help="euclidean|greatcircle (0|1)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_params(p, required=True)
    _add_runtime(p)

    p = sub.add_parser("fit", help="maximum likelihood fit of an x,y,z CSV")
    p.add_argument("data", help="input CSV with x,y,z")
    p.add_argument("--dmetric", type=_metric, default=DistanceMetric.parse("euclidean"))
    p.add_argument("--detrend", choices=("none", "linear"), default="none",
                   help="remove an OLS plane before fitting")
    p.add_argument("--report", help="write the JSON report here as well")
    p.add_argument("--trace", help="where to write the optimiser trace on failure")
    _add_optim(p)
    _add_compute(p)
    _add_runtime(p)

    p = sub.add_parser("predict", help="kriging prediction at target locations")
    p.add_argument("--observed", required=True, help="CSV with x,y,z")
    p.add_argument("--targets", required=True, help="CSV with x,y (z empty)")
    p.add_argument("--out", required=True, help="output CSV (targets plus mean,variance)")
    p.add_argument("--dmetric", type=_metric, default=DistanceMetric.parse("euclidean"),
                   help="metric of the observed file")
    p.add_argument("--target-dmetric", type=_metric, default=None,
                   help="metric of the targets file (defaults to --dmetric)")
    p.add_argument("--params", help="fit report (JSON) providing sigma_sq, beta, nu")
    p.add_argument("--detrend", choices=("none", "linear"), default="none")
    _add_params(p, required=False)
    _add_optim(p)
    _add_compute(p)
    _add_runtime(p)

    p = sub.add_parser("bench", help="time likelihood evaluations; CSV rows to stdout")
    p.add_argument("--n", type=_int_list, default=[400, 900, 1600])
    p.add_argument("--workers", type=_int_list, default=[1])
    p.add_argument("--ts", type=_int_list, default=[100])
    p.add_argument("--compute", default="exact", help="comma list of exact,dst,tlr")
    p.add_argument("--tlr-accuracy", type=float, default=1e-9)
    p.add_argument("--dst-bandwidth", type=int, default=1)
    p.add_argument("--evals", type=int, default=3, help="likelihood evaluations per cell")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--nu", type=float, default=0.5)
    return parser


def _check_runtime(args):
    if args.pgrid != 1 or args.qgrid != 1:
        raise UsageError("only a 1x1 process grid is supported (--pgrid 1 --qgrid 1)")
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    if args.ts < 1:
        raise UsageError("--ts must be at least 1")


def _mode(compute, tlr_accuracy, dst_bandwidth) -> MatrixMode:
    if compute == "dst":
        return MatrixMode.dst(dst_bandwidth)
    if compute == "tlr":
        return MatrixMode.tlr(tlr_accuracy)
    if compute == "exact":
        return MatrixMode.exact()
    raise UsageError(f"unknown backend {compute!r}")


def _backend(args) -> ComputeBackend:
    return ComputeBackend(_mode(args.compute, args.tlr_accuracy, args.dst_bandwidth),
                          args.workers, args.ts)


def _params_from_flags(args):
    given = [v is not None for v in (args.sigma_sq, args.beta, args.nu)]
    if any(given) and not all(given):
        raise UsageError("--sigma-sq, --beta and --nu must be given together")
    if all(given):
        return MaternParams(args.sigma_sq, args.beta, args.nu)
    return None


def _opt_config(args):
    bounds = ParamBounds(tuple(args.clb), tuple(args.cub))
    opt = OptimizerConfig(bounds.lower, bounds.upper, tol=args.tol, max_iters=args.max_iters)
    return bounds, opt


def _fmt(v):
    return repr(float(v))


def cmd_simulate(args, out):
    _check_runtime(args)
    sources = sum(x is not None for x in (args.n, args.grid, args.locations))
    if sources != 1:
        raise UsageError("give exactly one of --n, --grid, --locations")
    params = MaternParams(args.sigma_sq, args.beta, args.nu)
    if args.n is not None:
        if args.n < 1:
            raise UsageError(f"--n must be positive, got {args.n}")
        locs = random_locations(args.n, args.seed, args.dmetric)
    elif args.grid is not None:
        if len(args.grid) != 2:
            raise UsageError("--grid expects NX,NY")
        locs = grid_locations(args.grid[0], args.grid[1], metric=args.dmetric)
    else:
        locs, _ = read_csv(args.locations, args.dmetric)
    backend = ComputeBackend(MatrixMode.exact(), args.workers, args.ts)
    t0 = time.perf_counter()
    field = simulate_at(SimulationSpec(params, locs, args.seed, backend))
    wall = time.perf_counter() - t0
    write_csv(args.out, locs, field.z)
    print(
        f"n={locs.count} seed={args.seed} sigma_sq={_fmt(params.sigma_sq)} "
        f"beta={_fmt(params.beta)} nu={_fmt(params.nu)} dmetric={args.dmetric.name} "
        f"wall_time={wall:.3f}s out={args.out}",
        file=out,
    )
    return EXIT_OK


def _load_field(path, metric, detrend):
    locs, z = read_csv(path, metric)
    if z is None:
        raise UsageError(f"{path}: no z values to fit")
    trend = None
    if detrend == "linear":
        z, trend = detrend_linear(locs, z)
    return GaussianField(locs, z, trend), trend


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["evaluation", "sigma_sq", "beta", "nu", "log_lik", "seconds"])
        for k, (x, f, t) in enumerate(zip(trace.points, trace.values, trace.per_eval_times)):
            w.writerow([k + 1, *(_fmt(v) for v in x), _fmt(f), f"{t:.6f}"])


def _fit_report(args, backend, result, trend, data):
    report = {
        "sigma_sq": result.params.sigma_sq,
        "beta": result.params.beta,
        "nu": result.params.nu,
        "log_lik": result.log_lik,
        "iterations": result.iterations,
        "total_time": result.total_time,
        "time_per_iter": result.time_per_iter,
        "status": result.trace.status,
        "backend": backend.name,
        "workers": backend.workers,
        "tile_size": backend.tile_size,
        "pgrid": args.pgrid,
        "qgrid": args.qgrid,
        "tlr_accuracy": args.tlr_accuracy if backend.name == "tlr" else None,
        "dst_bandwidth": args.dst_bandwidth if backend.name == "dst" else None,
        "dmetric": args.dmetric.name,
        "clb": list(args.clb),
        "cub": list(args.cub),
        "tol": args.tol,
        "max_iters": args.max_iters,
        "detrend": args.detrend,
        "data": data,
    }
    if trend is not None:
        report["trend_c"], report["trend_a"], report["trend_b"] = trend.as_tuple()
    return report


def _run_fit(args, field):
    backend = _backend(args)
    bounds, opt = _opt_config(args)
    try:
        return backend, fit_mle(field, bounds, opt, backend)
    except FitError as exc:
        path = args.trace or "tilegeo-trace.csv"
        if exc.trace is not None:
            _write_trace(path, exc.trace)
        raise TilegeoError(f"{exc}; optimiser trace written to {path}") from exc


def cmd_fit(args, out):
    _check_runtime(args)
    field, trend = _load_field(args.data, args.dmetric, args.detrend)
    backend, result = _run_fit(args, field)
    report = _fit_report(args, backend, result, trend, args.data)
    text = json.dumps(report, indent=2)
    print(text, file=out)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _params_from_report(path):
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                data[k.strip()] = v.strip()
    try:
        return MaternParams(float(data["sigma_sq"]), float(data["beta"]), float(data["nu"]))
    except KeyError as exc:
        raise UsageError(f"{path}: report lacks {exc.args[0]}") from exc


def cmd_predict(args, out):
    _check_runtime(args)
    target_metric = args.target_dmetric or args.dmetric
    if target_metric != args.dmetric:
        raise UsageError(
            f"metric mismatch: observed uses {args.dmetric.name}, targets use {target_metric.name}"
        )
    params = _params_from_flags(args)
    if params is not None and args.params:
        raise UsageError("give parameters either by flags or by --params, not both")
    if args.params:
        params = _params_from_report(args.params)
    locs, z = read_csv(args.observed, args.dmetric)
    if z is None:
        raise UsageError(f"{args.observed}: no z values")
    targets, _ = read_csv(args.targets, target_metric)
    backend = _backend(args)
    trend = None
    fit_z = z
    if args.detrend == "linear":
        fit_z, trend = detrend_linear(locs, z)
    if params is None:
        _, result = _run_fit(args, GaussianField(locs, fit_z, trend))
        params = result.params
    if trend is not None:
        res = krige_with_trend(locs, z, targets, params, trend, backend)
    else:
        res = krige(GaussianField(locs, z), targets, params, backend)
    write_csv(args.out, targets, None, {"mean": res.mean, "variance": res.variance})
    msg = (
        f"predicted {targets.count} targets from {locs.count} observations with "
        f"sigma_sq={_fmt(params.sigma_sq)} beta={_fmt(params.beta)} nu={_fmt(params.nu)}"
    )
    if trend is not None:
        msg += f" trend c={_fmt(trend.c)} a={_fmt(trend.a)} b={_fmt(trend.b)}"
    print(msg + f" out={args.out}", file=out)
    return EXIT_OK


def bench_rows(ns, workers, tile_sizes, computes, evals=3, seed=0,
               params=MaternParams(1.0, 0.1, 0.5), tlr_accuracy=1e-9, dst_bandwidth=1):
    """Yield ``(n, workers, ts, backend, time_per_iter_seconds, iterations)`` rows.

    Each ``n`` uses one simulated field (fixed seed) for every cell.
    """
    for n in ns:
        field = simulate_at(SimulationSpec(params, random_locations(n, seed), seed))
        for compute in computes:
            mode = _mode(compute, tlr_accuracy, dst_bandwidth)
            for w in workers:
                for ts in tile_sizes:
                    backend = ComputeBackend(mode, w, ts)
                    evaluate = LikelihoodEvaluator(field, backend)
                    times = []
                    for _ in range(evals):
                        t0 = time.perf_counter()
                        evaluate(params)
                        times.append(time.perf_counter() - t0)
                    yield (n, w, ts, compute, float(np.mean(times)), evals)


def cmd_bench(args, out):
    computes = [c.strip() for c in args.compute.split(",") if c.strip()]
    for c in computes:
        if c not in ("exact", "dst", "tlr"):
            raise UsageError(f"unknown backend {c!r}")
    if args.evals < 1:
        raise UsageError("--evals must be at least 1")
    if min(args.n) < 1 or min(args.workers) < 1 or min(args.ts) < 1:
        raise UsageError("n, workers and ts must be positive")
    params = MaternParams(args.sigma_sq, args.beta, args.nu)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["n", "workers", "ts", "backend", "time_per_iter_seconds", "iterations"])
    for row in bench_rows(args.n, args.workers, args.ts, computes, args.evals, args.seed,
                          params, args.tlr_accuracy, args.dst_bandwidth):
        w.writerow([row[0], row[1], row[2], row[3], f"{row[4]:.6f}", row[5]])
        out.flush()
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "bench": cmd_bench,
}


def main(argv=None, out=None, err=None) -> int:
    """Entry point; returns the process exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except np.linalg.LinAlgError as exc:
        print(f"tilegeo {args.command}: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (UsageError, DomainError, ValueError, OSError) as exc:
        print(f"tilegeo {args.command}: error: {exc}", file=err)
        return EXIT_USAGE
    except (SingularMatrixError, TilegeoError, ArithmeticError) as exc:
        print(f"tilegeo {args.command}: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC


def run(argv) -> tuple[int, str, str]:
    """Run the CLI in-process, capturing output; handy for tests."""
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


if __name__ == "__main__":
    sys.exit(main())
