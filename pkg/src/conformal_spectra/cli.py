"""Command line entry point: one subcommand per experiment, CSV/JSON out."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundError, dodziuk_check, load_cover, mcgowan_bound
from .complex import ComplexError, build_complex
from .eigen import SolverError, full_spectrum_report
from .handles import handle_sweep
from .hodge import ConformalProfile, HodgeError
from .pinch import PinchParams, pinch_sweep
from .prescribe import PrescriptionError, load_targets, prescribe
from .radial import RadialError, cylinder_operator, radial_spectrum

log = logging.getLogger("conformal_spectra")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
CONFIG_ERRORS = (ComplexError, BoundError, PrescriptionError, RadialError, ValueError,
                 OSError, json.JSONDecodeError, KeyError)
SOLVER_ERRORS = (SolverError, HodgeError)


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text}") from exc


class Output:
    """Collects a result body and writes it with a provenance header."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        params = {k: v for k, v in sorted(vars(args).items())
                  if k not in ("func", "out", "timestamp", "command")}
        self.meta = {"tool": "conformal-spectra", "version": __version__,
                     "command": args.command, "seed": args.seed, "params": params}
        if args.timestamp:
            self.meta["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()

    def _emit(self, text: str):
        if self.args.out in (None, "-"):
            sys.stdout.write(text)
        else:
            Path(self.args.out).write_text(text)

    def csv(self, body: str):
        head = "".join(f"# {k}: {json.dumps(v, sort_keys=True, default=str)}\n"
                       for k, v in self.meta.items())
        self._emit(head + body)

    def json(self, payload: dict):
        self._emit(json.dumps({"meta": self.meta, "result": payload}, indent=2,
                              sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _profile(spec: str, K, rng: np.random.Generator) -> ConformalProfile:
    kind, _, rest = spec.partition(":")
    try:
        if kind == "const":
            return ConformalProfile.constant(K, float(rest or 1.0))
        if kind == "random":
            lo, hi = (float(x) for x in rest.split(":")) if rest else (0.5, 2.0)
            return ConformalProfile(rng.uniform(lo, hi, K.n_cells(0)), tag=spec)
    except ValueError as exc:
        raise ConfigError(f"bad profile {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown profile {spec!r}; use const:C or random:LO:HI")


# -------------------------------------------------------------------------
# subcommands


def cmd_spectrum(args, out: Output) -> int:
    K = build_complex(args.complex)
    rng = np.random.default_rng(args.seed)
    h = _profile(args.profile, K, rng)
    rep = full_spectrum_report(K, h, args.p, args.m, ambient_dim=args.ambient,
                               check_union=not args.no_union_check)
    out.csv(rep.to_csv())
    if not args.no_union_check:
        bad = [p for p, e in rep.union_error.items() if e > 1e-8]
        if bad or not rep.harmonic_matches_betti:
            _error_record("check", f"spectral identities failed in degrees {bad}")
            return EXIT_CHECK
    return EXIT_OK


def cmd_pinch_sweep(args, out: Output) -> int:
    params = PinchParams(args.n, args.p, eta=args.eta_list[0], R=args.R,
                         resolution=args.resolution, V=args.V)
    rep = pinch_sweep(params, args.eta_list, cross_check=args.cross_check,
                      threads=args.threads)
    out.csv(rep.to_csv())
    failed = [r.eta for r in rep.rows if r.status != "ok"]
    if failed:
        _error_record("solver", f"rows failed at eta={failed}")
        return EXIT_SOLVER
    return EXIT_OK


def _radial_profile(spec: str, n: int, p: int):
    kind, _, rest = spec.partition(":")
    try:
        if kind == "const":
            c = float(rest or 1.0)
            return lambda t: np.full_like(t, c)
        if kind == "pinch":
            # pinch profile transplanted to the unit interval
            params = PinchParams(max(n, 5), 1, float(rest or 0.1))
            return lambda t: params.h(t * params.R)
    except ValueError as exc:
        raise ConfigError(f"bad profile {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown radial profile {spec!r}; use const:C or pinch:ETA")


def cmd_radial(args, out: Output) -> int:
    if args.kind == "pinch":
        from .radial import pinch_operator
        prob = pinch_operator(PinchParams(args.n, args.p, args.eta, resolution=args.resolution))
    else:
        prob = cylinder_operator(args.n, args.p, _radial_profile(args.profile, args.n, args.p),
                                 args.resolution)
    s = radial_spectrum(prob, args.m)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "p", "index", "value", "residual"])
    for i, (v, r) in enumerate(zip(s.values, s.residuals), 1):
        w.writerow([args.n, args.p, i, repr(float(v)), repr(float(r))])
    out.csv(buf.getvalue())
    return EXIT_OK


def cmd_mcgowan(args, out: Output) -> int:
    data, raw = load_cover(args.config)
    a = args.a if args.a is not None else float(raw.get("a", 1.0))
    b = args.b if args.b is not None else float(raw.get("b", 1.0))
    res = mcgowan_bound(data, data.degree, a, b)
    out.json({"degree": data.degree, "k_q": res.k_q, "denominator": res.denominator,
              "bound": res.bound, "a": a, "b": b, "c_rho": data.c_rho})
    return EXIT_OK


def cmd_dodziuk(args, out: Output) -> int:
    rng = np.random.default_rng(args.seed)
    chk = dodziuk_check(args.tau, args.n, args.trials, rng, tuple(args.complex), args.m)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "complex", "degree", "index", "value", "perturbed", "ratio"])
    for t, name, p, i, x, y, q in chk.rows:
        w.writerow([t, name, p, i, repr(x), repr(y), repr(q)])
    out.csv(buf.getvalue())
    log.info("dodziuk: %d ratios in [%g, %g], %d violations",
             chk.compared, chk.ratios_min, chk.ratios_max, chk.violations)
    if chk.violations:
        _error_record("check", f"{chk.violations} ratios outside the interval")
        return EXIT_CHECK
    return EXIT_OK


def cmd_handle_sweep(args, out: Output) -> int:
    K1, K2 = build_complex(args.left), build_complex(args.right)
    rep = handle_sweep(K1, K2, args.eps_list, args.m, L=args.L, resolution=args.resolution,
                       ambient_dim=args.ambient, blend=args.blend)
    out.csv(rep.to_csv())
    return EXIT_OK


def cmd_prescribe(args, out: Output) -> int:
    target = load_targets(args.targets)
    res = prescribe(target, args.tol, tuple(args.eps_schedule), threads=args.threads,
                    max_evaluations=args.max_evaluations)
    out.json(res.to_json(target))
    if not res.converged:
        _error_record("solver", f"prescription did not converge (error {res.max_error:.3e})")
        return EXIT_SOLVER
    return EXIT_OK


# -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker pool size")
    common.add_argument("--seed", type=int, default=0, help="random seed (recorded)")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--timestamp", action="store_true",
                        help="record the wall-clock time in the header")

    ap = _Parser(prog="conformal-spectra",
                 description="Discrete Hodge spectra under conformal deformations.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("spectrum", parents=[common], help="coexact/exact/harmonic report")
    s.add_argument("--complex", required=True, help="e.g. cycle:8, cycle:4*cycle:4, simplex:4")
    s.add_argument("--p", type=_ints, default=[0], help="degrees, comma separated")
    s.add_argument("--m", type=int, default=4)
    s.add_argument("--profile", default="const:1", help="const:C or random:LO:HI")
    s.add_argument("--ambient", type=int, default=None)
    s.add_argument("--no-union-check", action="store_true")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("pinch-sweep", parents=[common], help="radial pinch sweep over eta")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--eta-list", type=_floats, default=[1.0, 1e-1, 1e-2, 1e-3, 1e-4])
    s.add_argument("--resolution", type=int, default=2000)
    s.add_argument("--R", type=float, default=1.0)
    s.add_argument("--V", type=float, default=1.0)
    s.add_argument("--cross-check", action="store_true",
                   help="coarse complex check of the first value")
    s.set_defaults(func=cmd_pinch_sweep)

    s = sub.add_parser("radial", parents=[common], help="1D invariant-form spectrum")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--kind", choices=["cylinder", "pinch"], default="cylinder")
    s.add_argument("--profile", default="const:1", help="cylinder profile: const:C or pinch:ETA")
    s.add_argument("--eta", type=float, default=0.1, help="floor for --kind pinch")
    s.add_argument("--resolution", type=int, default=2000)
    s.add_argument("--m", type=int, default=4)
    s.set_defaults(func=cmd_radial)

    s = sub.add_parser("mcgowan", parents=[common], help="cover lower bound from JSON")
    s.add_argument("--config", required=True)
    s.add_argument("--a", type=float, default=None)
    s.add_argument("--b", type=float, default=None)
    s.set_defaults(func=cmd_mcgowan)

    s = sub.add_parser("dodziuk-check", parents=[common], help="randomized containment check")
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--m", type=int, default=4)
    s.add_argument("--complex", action="append", default=None,
                   help="complex spec, repeatable (default: a small corpus)")
    s.set_defaults(func=cmd_dodziuk)

    s = sub.add_parser("handle-sweep", parents=[common], help="thin-handle convergence")
    s.add_argument("--left", required=True)
    s.add_argument("--right", required=True)
    s.add_argument("--eps-list", type=_floats, default=[0.1, 0.05, 0.02, 0.01])
    s.add_argument("--m", type=int, default=4)
    s.add_argument("--L", type=float, default=0.05)
    s.add_argument("--resolution", type=int, default=8)
    s.add_argument("--ambient", type=int, default=3)
    s.add_argument("--blend", action="store_true")
    s.set_defaults(func=cmd_handle_sweep)

    s = sub.add_parser("prescribe", parents=[common], help="hit eigenvalue/volume targets")
    s.add_argument("--targets", required=True)
    s.add_argument("--tol", type=float, default=1e-2)
    s.add_argument("--eps-schedule", type=_floats, default=[0.2, 0.1, 0.05])
    s.add_argument("--max-evaluations", type=int, default=200)
    s.set_defaults(func=cmd_prescribe)
    return ap


def _error_record(kind: str, message: str, **extra):
    rec = {"error": kind, "message": message}
    rec.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")


def _configure_logging():
    level = os.environ.get("CONFORMAL_SPECTRA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if getattr(args, "complex", 0) is None:
            args.complex = ["cycle:6*cycle:6", "simplex:4", "cycle:5*path:4"]
        return args.func(args, Output(args))
    except ConfigError as exc:
        _error_record("config", str(exc))
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        _error_record("solver", str(exc), residual=getattr(exc, "residual", None))
        return EXIT_SOLVER
    except CONFIG_ERRORS as exc:
        _error_record("config", f"{type(exc).__name__}: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
