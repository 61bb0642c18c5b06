"""Command-line interface: ``sslcarma <command> [options]``.

Every command writes a ``<output>.manifest.json`` next to its main output
recording the argument vector, the seed actually used, input and output
hashes and the wall time; ``sslcarma replay <manifest>`` re-runs it and
checks the outputs hash-for-hash.

Exit codes: 0 success, 1 input or validation error, 2 non-convergence,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .estimate import (
    FitResult,
    OptimizerConfig,
    ParameterVector,
    fit_levy_carma,
    fit_sslcarma,
    simulation_study,
)
from .exceptions import NonConvergenceError, NumericalError, SSLCarmaError
from .kalman import run_filter, system_covariances
from .periodic import PeriodicMean
from .sampling import LevySystem, SampledSystem, simulate_sampled
from .volatility import (
    PriceSeries,
    RvSeries,
    SeasonalFilter,
    compare_in_sample,
    deseasonalize,
    realized_volatility,
    reseasonalize,
)

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_NUMERICAL = 0, 1, 2, 3
SEED_ENV = "SSLCARMA_SEED"


class UsageError(SSLCarmaError, ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with the
    # non-convergence code
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _resolve_seed(args, fallback=None) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if fallback is not None:
        return int(fallback)
    return int(np.random.SeedSequence().entropy % (2 ** 63))


def _threads(args) -> int:
    n = getattr(args, "threads", None)
    return int(n) if n else (os.cpu_count() or 1)


def _config(args) -> OptimizerConfig:
    return OptimizerConfig(restarts=args.restarts, maxfev=args.maxfev)


def _order(values):
    p, q = values
    return int(p), int(q)


# --------------------------------------------------------------------------
# commands; each returns (exit code, output paths, input paths, seed)


def cmd_simulate(args):
    mf = io.load_model(args.model)
    seed = _resolve_seed(args, mf.seed)
    system = SampledSystem(mf.model, mf.spec, mf.m0)
    n = args.periods * mf.m0
    path = simulate_sampled(system, n, burn_in_periods=args.burn_in, seed=seed)
    ds = path.driver.increments[path.burn_in_cells:]
    header = ["n", "t", "Y", "dS"]
    cols = [np.arange(1, n + 1), path.times[1:], path.observations, ds]
    if args.states:
        header += [f"X{i + 1}" for i in range(path.states.shape[1])]
        cols += list(path.states[1:].T)
    io.write_columns(args.out, header, cols)
    return EXIT_OK, [args.out], _model_inputs(args.model), seed


def _model_inputs(model):
    return [] if str(model) in io.bundled_models() else [model]


def cmd_estimate(args):
    y = io.read_series(args.data, args.column)
    order = _order(args.order)
    if args.mode == "ssl":
        if args.lengths is None or args.m0 is None:
            raise UsageError("estimate --mode ssl requires --lengths and --m0")
        fit = fit_sslcarma(y, args.m0, args.lengths, order, "auto", _config(args), beta=args.beta)
    else:
        fit = fit_levy_carma(y, order, args.h, "auto", _config(args))
    io.write_json(args.out, fit.to_dict())
    code = EXIT_OK if fit.converged else EXIT_NONCONVERGED
    if not fit.converged:
        _report_error(NonConvergenceError(fit.message or "fit did not converge"), code)
    return code, [args.out], [args.data], None


def cmd_predict(args):
    y = io.read_series(args.data, args.column)
    fit = FitResult.from_dict(io.read_json(args.fit))
    if fit.mode == "ssl":
        mean = PeriodicMean(np.asarray(fit.phase_means)).expand(y.size)
        system = fit.system()
        Q, om = system_covariances(system, fit.beta)
    else:
        mu = fit.phase_means[0] if fit.phase_means else 0.0
        mean = np.full(y.size, mu)
        system = LevySystem(fit.params.model(), fit.h)
        Q, om = system_covariances(system, fit.driver_variance)
    out = run_filter(system.transition, system.b, Q, om, y - mean)
    pred = out.predictions + mean
    header = ["n", "Y", "Yhat", "innovation", "Delta"]
    cols = [np.arange(1, y.size + 1), y, pred, out.innovations, out.variances]
    inputs = [args.data, args.fit]
    if args.filter:
        filt = _load_filter(args.filter)
        header += ["Y_reseasonalized", "Yhat_reseasonalized"]
        cols += [reseasonalize(y, filt), reseasonalize(pred, filt)]
        inputs.append(args.filter)
    io.write_columns(args.out, header, cols)
    return EXIT_OK, [args.out], inputs, None


def cmd_rv(args):
    t, p = io.read_prices(args.prices)
    rv = realized_volatility(PriceSeries(t, p, args.obs_per_day), args.k)
    io.write_columns(args.out, ["n", "RV"], [np.arange(1, len(rv) + 1), rv.values])
    return EXIT_OK, [args.out], [args.prices], None


def _load_filter(path) -> SeasonalFilter:
    d = io.read_json(path)
    unknown = set(d) - {"mean", "scales"}
    if unknown:
        raise io.ParseError(f"{path}: unknown keys {sorted(unknown)}")
    return SeasonalFilter(float(d["mean"]), np.asarray(d["scales"], dtype=float))


def cmd_deseasonalize(args):
    x = io.read_series(args.data, args.column)
    filtered, filt = deseasonalize(RvSeries(x, args.m0))
    io.write_columns(args.out, ["n", "rv"], [np.arange(1, x.size + 1), filtered])
    io.write_json(args.filter_out, {"mean": filt.mean, "scales": filt.scales.tolist()})
    return EXIT_OK, [args.out, args.filter_out], [args.data], None


def cmd_reseasonalize(args):
    x = io.read_series(args.data, args.column)
    filt = _load_filter(args.filter)
    io.write_columns(args.out, ["n", "RV"], [np.arange(1, x.size + 1), reseasonalize(x, filt)])
    return EXIT_OK, [args.out], [args.data, args.filter], None


def cmd_compare(args):
    x = io.read_series(args.data, args.column)
    rep = compare_in_sample(RvSeries(x, args.m0), _order(args.order), args.lengths,
                            _config(args), beta=args.beta, threads=_threads(args))
    io.write_json(args.out, rep.summary())
    io.write_columns(args.errors, ["n", "RV", "abs_error_sslcarma", "abs_error_levy"],
                     [np.arange(1, x.size + 1), x, rep.errors_sslcarma, rep.errors_levy])
    code = EXIT_NONCONVERGED if rep.failed else EXIT_OK
    if rep.failed:
        _report_error(NonConvergenceError(json.dumps(rep.failures)), code)
    return code, [args.out, args.errors], [args.data], None


def cmd_study(args):
    mf = io.load_model(args.model)
    seed = _resolve_seed(args, mf.seed)
    part = mf.spec.partition
    truth = ParameterVector(mf.model.ar, mf.model.ma, part.rates)
    res = simulation_study(truth, args.replications, args.periods, seed, part.lengths, mf.m0,
                           mf.spec.jump_law, mf.spec.drift, args.burn_in, _config(args),
                           _threads(args))
    res.to_csv(args.out)
    outputs = [args.out]
    if args.estimates:
        cols = [np.arange(res.estimates.shape[0])] + [res.estimates[:, i]
                                                      for i in range(res.estimates.shape[1])]
        io.write_columns(args.estimates, ["replication"] + res.labels, cols)
        outputs.append(args.estimates)
    return EXIT_OK, outputs, _model_inputs(args.model), seed


def cmd_replay(args):
    man = io.read_json(args.manifest)
    argv = list(man["argv"])
    if man.get("seed") is not None and "--seed" not in argv:
        argv += ["--seed", str(man["seed"])]
    code = main(argv, manifest=False)
    mismatched = [p for p, h in man.get("outputs", {}).items()
                  if not Path(p).exists() or io.sha256_file(p) != h]
    if mismatched:
        print(json.dumps({"replay": "mismatch", "files": mismatched}), file=sys.stderr)
        return EXIT_INPUT, [], [], None
    print(json.dumps({"replay": "identical", "files": sorted(man.get("outputs", {}))}))
    return code, [], [], None


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sslcarma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def optim(p):
        p.add_argument("--restarts", type=int, default=3)
        p.add_argument("--maxfev", type=int, default=2000)

    p = sub.add_parser("simulate", help="simulate a sampled SSLCARMA path")
    p.add_argument("--model", required=True, help="model JSON or bundled model name")
    p.add_argument("--periods", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=50, help="burn-in periods")
    p.add_argument("--states", action="store_true", help="also write X1..Xp")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="least-squares fit")
    p.add_argument("--data", required=True)
    p.add_argument("--column")
    p.add_argument("--order", nargs=2, type=int, default=(2, 1), metavar=("P", "Q"))
    p.add_argument("--mode", choices=("ssl", "levy"), default="ssl")
    p.add_argument("--m0", type=int)
    p.add_argument("--lengths", type=float, nargs="+")
    p.add_argument("--beta", type=float, default=1.0,
                   help="jump second moment (sets the level of the rates)")
    p.add_argument("--h", type=float, default=1.0, help="sampling step for --mode levy")
    optim(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("predict", help="one-step predictions from a fit")
    p.add_argument("--data", required=True)
    p.add_argument("--column")
    p.add_argument("--fit", required=True)
    p.add_argument("--filter", help="seasonal filter JSON to map predictions back")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rv", help="realized volatility from prices")
    p.add_argument("--prices", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--obs-per-day", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rv)

    p = sub.add_parser("deseasonalize", help="median seasonal filter")
    p.add_argument("--data", required=True)
    p.add_argument("--column")
    p.add_argument("--m0", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter-out", required=True)
    p.set_defaults(func=cmd_deseasonalize)

    p = sub.add_parser("reseasonalize", help="invert the seasonal filter")
    p.add_argument("--data", required=True)
    p.add_argument("--column")
    p.add_argument("--filter", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reseasonalize)

    p = sub.add_parser("compare", help="in-sample SSLCARMA vs deseasonalized CARMA")
    p.add_argument("--data", required=True)
    p.add_argument("--column")
    p.add_argument("--m0", type=int, required=True)
    p.add_argument("--order", nargs=2, type=int, default=(2, 1), metavar=("P", "Q"))
    p.add_argument("--lengths", type=float, nargs="+", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--threads", type=int)
    optim(p)
    p.add_argument("--out", required=True)
    p.add_argument("--errors", required=True, help="per-n absolute error CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("study", help="simulation study of the estimator")
    p.add_argument("--model", default="simulation_study")
    p.add_argument("--replications", type=int, required=True)
    p.add_argument("--periods", type=int, default=200)
    p.add_argument("--burn-in", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    optim(p)
    p.add_argument("--out", required=True)
    p.add_argument("--estimates", help="per-replication estimates CSV")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def _report_error(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)


def _exit_code(exc) -> int:
    if isinstance(exc, NonConvergenceError):
        return EXIT_NONCONVERGED
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_INPUT


def _write_manifest(args, argv, outputs, inputs, seed, wall):
    # argv without --seed so replay can force the recorded one
    man = {
        "command": args.command,
        "argv": argv,
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": seed,
        "inputs": {str(p): io.sha256_file(p) for p in inputs},
        "outputs": {str(p): io.sha256_file(p) for p in outputs},
        "tool_version": _version(),
        "wall_time": wall,
    }
    io.write_json(f"{outputs[0]}.manifest.json", man)


def main(argv=None, manifest: bool = True) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        code, outputs, inputs, seed = args.func(args)
    except (SSLCarmaError, OSError, KeyError, TypeError) as exc:
        code = _exit_code(exc)
        _report_error(exc, code)
        return code
    if manifest and outputs:
        _write_manifest(args, argv, outputs, inputs, seed, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
