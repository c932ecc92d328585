"""Command-line front end.

Every subcommand prints a short human summary on stdout and, with ``--output``,
writes a report (JSON, or a CSV series where one exists).  Exit codes: 0 success
or Certified, 1 Refuted / failed hypothesis / violated bound, 2 bad input,
3 sampling or numerical failure (including Inconclusive verdicts).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import certify as cert
from . import monge_ampere as ma
from .errors import DfLabError, HypothesisFailed, InputError, LowerBoundViolated, PreconditionError
from .geometry import DomainSpec, boundary_sample, load_spec
from .levi import compute_K0, levi_at, s_sensitivity, s_trend

EXIT_OK, EXIT_REFUTED, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
SEED_ENV = "DF_LAB_SEED"
CSV_COMMANDS = ("levi-map", "ma-mass", "decay", "stokes-check")
VERDICT_EXIT = {cert.CERTIFIED: EXIT_OK, cert.REFUTED: EXIT_REFUTED, cert.INCONCLUSIVE: EXIT_NUMERICAL}


class _UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def builtin_specs():
    return sorted(p.stem for p in resources.files("dflab.specs").iterdir() if p.name.endswith(".json"))


def resolve_spec(name_or_path, seed=None) -> DomainSpec:
    """Load a spec from a path or a bundled name; ``seed`` (or DF_LAB_SEED) overrides the file's seed."""
    path = Path(name_or_path)
    if not path.exists() and name_or_path in builtin_specs():
        path = resources.files("dflab.specs") / f"{name_or_path}.json"
    spec = load_spec(path)
    env = os.environ.get(SEED_ENV)
    if seed is None and env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise PreconditionError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if seed is not None:
        spec.seed = int(seed)
    return spec


def _float_pair(text):
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return a, b


def _tgrid(text):
    """``a:b:k`` gives k log-spaced values from a to b; a comma list is taken as is."""
    try:
        if ":" in text:
            a, b, k = text.split(":")
            a, b, k = float(a), float(b), int(k)
            if not (0 < a < b and k >= 2):
                raise ValueError
            return np.geomspace(a, b, k).tolist()
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:k with 0 < a < b, k >= 2, or a comma list; got {text!r}") from None


def _coords(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated coordinates, got {text!r}") from None


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


# -- subcommands -------------------------------------------------------------
# Each returns (results, exit_code, summary_lines, csv_rows or None).


def _levi_map(spec, args, warnings):
    bs = boundary_sample(spec, args.count or spec.samples["boundary"])
    if len(bs.points) < bs.requested:
        warnings.append(f"only {len(bs.points)} of {bs.requested} boundary samples converged")
    data = [levi_at(spec, p) for p in bs.points]
    sens = s_sensitivity(spec, data)
    if sens["n_band"] > sens["n_weak"]:
        warnings.append(
            f"{sens['n_band'] - sens['n_weak']} samples have a smallest Levi eigenvalue within "
            f"{sens['band_threshold']:g} of zero; S over that band is {sens['S_band']:.6g}"
        )
    K0 = compute_K0(spec, bs.points)
    ranks = [d.rank for d in data]
    rows = []
    for d in data:
        row = {f"p{i}": v for i, v in enumerate(d.point.tolist())}
        row.update(rank=d.rank, min_eig=d.min_eig, max_eig=float(d.eigs[-1]) if len(d.eigs) else None)
        rows.append(row)
    results = {
        "n_samples": len(data),
        "rank_counts": {str(r): ranks.count(r) for r in sorted(set(ranks))},
        "S": sens["S"],
        "S_sensitivity": sens,
        "S_trend": s_trend(spec, data),
        "K0": K0,
        "points": rows,
    }
    summary = [f"samples={len(data)} ranks={results['rank_counts']} S={sens['S']:.6g} K0={K0:.6g}"]
    return results, EXIT_OK, summary, rows


def _certify(spec, args, warnings):
    cert._check_eta(args.eta)
    if args.shrink:
        res = cert.certify_with_shrink(spec, args.eta, args.collar, args.count)
    else:
        fn = cert.certify_via_log if args.form == "log" else cert.certify_exponent
        res = fn(spec, args.eta, args.collar, args.count)
    warnings.extend(res.warnings)
    summary = [f"{res.verdict} eta={res.eta:g} min_margin={res.min_margin:.3e} witness={res.witness}"]
    return res.to_dict(), VERDICT_EXIT[res.verdict], summary, None


def _index(spec, args, warnings):
    est = cert.estimate_index(spec, args.resolution, args.collar, args.count)
    if est.inconclusive:
        warnings.append(f"exponent {cert.BISECTION_FLOOR} is not certified; the index is below the bisection floor")
    summary = [f"index in [{est.lo:.6g}, {est.hi:.6g}] after {est.iterations} bisection steps"]
    return est.to_dict(), EXIT_NUMERICAL if est.inconclusive else EXIT_OK, summary, None


def _oka(spec, args, warnings):
    est = cert.estimate_oka_index(spec, args.collar, args.count)
    if est.raw_min < 0:
        warnings.append(f"ddbar(-log(-r)) has smallest eigenvalue {est.raw_min:.3g} < 0; K clipped to 0")
    return est.to_dict(), EXIT_OK, [f"K={est.K:.6g}"], None


def _bounds(spec, args, warnings):
    results = {}
    if args.K is not None or args.S is not None:
        if args.K is None or args.S is None:
            raise PreconditionError("--K and --S must be given together")
        results["i0_lower_bound"] = cert.i0_lower_bound(args.K, args.S)
        if args.cpn:
            results["i0_cpn"] = cert.i0_cpn(args.S)
    if args.K1 is not None:
        results["i0_key_bound"] = cert.i0_key_bound(args.K1)
    if not results:
        raise PreconditionError("bounds needs --K and --S, or --K1")
    return results, EXIT_OK, [repr(v) for v in results.values()], None


def _sandwich(spec, args, warnings):
    res = cert.verify_sandwich(spec, args.K, args.collar, args.count)
    return res.to_dict(), EXIT_OK, [f"K1={res.K1:.6g} min_ratio={res.min_ratio:.6g}"], None


def _os_check(spec, args, warnings):
    res = cert.ohsawa_sibony_check(spec, args.c, args.eta, args.K, args.I0, args.collar, args.count)
    warnings.extend(res.warnings)
    summary = [f"{res.verdict} min_margin={res.min_margin:.3e} witness={res.witness}"]
    return res.to_dict(), VERDICT_EXIT[res.verdict], summary, None


def _ma_mass(spec, args, warnings):
    est = ma.f_interior(spec, args.eta, args.t, args.eps0, samples=args.samples, threads=args.threads)
    row = {"t": args.t, "value": est.value, "error": est.stderr}
    return est.to_dict(), EXIT_OK, [f"f({args.t:g}) = {est.value:.6g} +- {est.stderr:.2g}"], [row]


def _decay(spec, args, warnings):
    if len(args.point) != 2 * spec.n:
        raise PreconditionError(f"--point needs {2 * spec.n} real coordinates, got {len(args.point)}")
    rank = levi_at(spec, args.point).rank
    fit = ma.decay_fit_pointwise(spec, args.point, args.eta, args.tgrid, rank=rank)
    if fit.n_excluded:
        warnings.append(f"{fit.n_excluded} of {len(fit.t_grid)} densities fell below the fit floor and were excluded")
    rows = [{"t": t, "value": v, "error": 0.0} for t, v in zip(fit.t_grid, fit.values)]
    code = EXIT_OK
    if math.isnan(fit.slope):
        warnings.append("fewer than two densities above the fit floor; no slope could be fitted")
        code = EXIT_NUMERICAL
    return {"rank": rank, **fit.to_dict()}, code, [f"rank={rank} slope={fit.slope:.6g} r2={fit.r2:.6g}"], rows


def _stokes(spec, args, warnings):
    rows = ma.stokes_check(
        spec, args.eta, args.tgrid, args.eps0, volume_samples=args.samples, shell_samples=args.shell_samples,
        threads=args.threads,
    )
    for r in rows:
        if not r["shell_check_ok"]:
            warnings.append(f"halving the shell at t={r['t']:g} moved the flux by more than one standard error")
    ok = all(r["consistent"] for r in rows)
    summary = [f"t={r['t']:g} interior={r['f_interior']:.6g} flux={r['flux']:.6g} gap={r['gap_sigma']:.2f} sigma" for r in rows]
    series = [{"t": r["t"], "value": r["f_interior"], "error": r["f_interior_err"], "flux": r["flux"], "flux_error": r["flux_err"]} for r in rows]
    return {"rows": rows, "consistent": ok}, EXIT_OK if ok else EXIT_NUMERICAL, summary, series


COMMANDS = {
    "levi-map": _levi_map,
    "certify": _certify,
    "index": _index,
    "oka": _oka,
    "bounds": _bounds,
    "sandwich": _sandwich,
    "os-check": _os_check,
    "ma-mass": _ma_mass,
    "decay": _decay,
    "stokes-check": _stokes,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--spec", default="ball2", help="spec file or bundled name (%(default)s)")
    common.add_argument("--seed", type=int, help=f"overrides the spec seed and {SEED_ENV}")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--output", "-o", help="report path")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    collar = _Parser(add_help=False)
    collar.add_argument("--collar", type=_float_pair, help="collar band lo:hi in units of -rho")
    collar.add_argument("--count", type=int, help="number of samples")

    p = _Parser(prog="dflab", description="Diederich-Fornaess and Oka index toolkit")
    p.add_argument("--version", action="version", version=f"dflab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("levi-map", parents=[common], help="Levi ranks, S and K0 on boundary samples")
    s.add_argument("--count", type=int)
    s = sub.add_parser("certify", parents=[common, collar], help="test one exponent")
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--form", choices=("hat", "log"), default="hat")
    s.add_argument("--shrink", action="store_true", help="re-test refutations on shrunk collars")
    s = sub.add_parser("index", parents=[common, collar], help="bisect for the DF index")
    s.add_argument("--resolution", type=float, default=0.01)
    sub.add_parser("oka", parents=[common, collar], help="estimate the Oka index")
    s = sub.add_parser("bounds", parents=[common], help="closed-form lower bounds for the DF index")
    s.add_argument("--K", type=float)
    s.add_argument("--S", type=float)
    s.add_argument("--K1", type=float)
    s.add_argument("--cpn", action="store_true", help="also report the projective-space bound for S")
    s = sub.add_parser("sandwich", parents=[common, collar], help="tangential sandwich constant K1")
    s.add_argument("--K", type=float, required=True)
    s = sub.add_parser("os-check", parents=[common, collar], help="check the Oka/DF inequality pair")
    for name in ("c", "eta", "K", "I0"):
        s.add_argument(f"--{name}", type=float, required=True)
    s = sub.add_parser("ma-mass", parents=[common], help="Monge-Ampere mass of rho_hat inside a level")
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--eps0", type=float, default=math.inf)
    s.add_argument("--samples", type=int)
    s = sub.add_parser("decay", parents=[common], help="flux-density decay along the inward normal")
    s.add_argument("--point", type=_coords, required=True)
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--tgrid", type=_tgrid, default=_tgrid("1e-4:1e-2:9"))
    s = sub.add_parser("stokes-check", parents=[common], help="interior mass against boundary flux")
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--tgrid", type=_tgrid, default=[0.02, 0.05, 0.1])
    s.add_argument("--eps0", type=float, default=math.inf)
    s.add_argument("--samples", type=int)
    s.add_argument("--shell-samples", type=int)
    return p


def _config(spec, args):
    params = {k: v for k, v in vars(args).items() if k not in ("spec", "output", "format", "verbose", "threads", "seed")}
    return {"spec": spec.to_dict() if spec is not None else None, "params": params}


def _write_csv(rows):
    buf = io.StringIO()
    fields = list(rows[0]) if rows else ["t", "value", "error"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"dflab: error: {exc}", file=stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=stderr)
    warnings = []
    spec = None
    report = {"tool": "dflab", "version": __version__, "command": args.command}
    try:
        if args.threads < 1:
            raise PreconditionError("--threads must be at least 1")
        if args.format == "csv" and args.command not in CSV_COMMANDS:
            raise PreconditionError(f"{args.command} has no CSV series; use --format json")
        if args.command != "bounds":
            spec = resolve_spec(args.spec, args.seed)
        results, code, summary, rows = COMMANDS[args.command](spec, args, warnings)
    except InputError as exc:
        print(f"dflab: input error: {exc}", file=stderr)
        return EXIT_INPUT
    except (HypothesisFailed, LowerBoundViolated) as exc:
        code, summary, rows = EXIT_REFUTED, [f"FAILED: {exc}"], None
        results = {"error": type(exc).__name__, "message": str(exc), "witness": exc.witness}
        results.update(ratio=getattr(exc, "ratio", None), fail_fraction=getattr(exc, "fail_fraction", None))
    except (DfLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dflab: numerical failure: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_NUMERICAL
    for line in summary:
        print(line, file=stdout)
    for w in warnings:
        print(f"warning: {w}", file=stderr)
    report.update(
        config=_config(spec, args),
        seed=spec.seed if spec is not None else None,
        results=results,
        warnings=warnings,
        exit_code=code,
        wall_clock=time.perf_counter() - t0,
    )
    if args.output:
        if args.format == "csv":
            text = _write_csv(_jsonable(rows or []))
        else:
            text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
        Path(args.output).write_text(text)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
