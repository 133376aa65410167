"""Command-line front end: ``gbmstab {analyze,verify,simulate,sweep,list}``.

Exit codes: 0 when every requested claim is Feasible and verified (or the
command simply succeeded), 2 when something is Infeasible or Unknown, 1 on
errors.  Reports are JSON documents written atomically.
"""

from __future__ import annotations

import argparse
import inspect
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from gbmstab import __version__
from gbmstab.bmi import assemble_lmi_p2
from gbmstab.heuristic import HeuristicConfig, check_fixed_q, p_sweep, solve_bmi
from gbmstab.model import (
    LinearSDESystem,
    ModelError,
    build_builtin,
    builtin_models,
    commutativity_report,
    load_system,
    parse_param,
)
from gbmstab.parallel import THREADS_ENV, thread_count
from gbmstab.quartic import q_matrix
from gbmstab.sdp import SolveOutcome, Status, solve_lmi_feasibility
from gbmstab.simulate import SimulationConfig, euler_maruyama, write_moment_table
from gbmstab.verify import load_certificate, mean_square_spectral_test, verify_certificate

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


class CLIError(Exception):
    pass


def _clean(obj):
    """Make a structure JSON-safe: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Status):
        return obj.value
    return obj


def write_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(doc: dict, out) -> None:
    text = json.dumps(_clean(doc), indent=2) + "\n"
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def outcome_to_dict(outcome: SolveOutcome) -> dict:
    doc = {
        "status": outcome.status.value,
        "margin": outcome.margin,
        "iterations": outcome.iterations,
        "note": outcome.certificate_note,
        "upper_bound": outcome.upper_bound,
    }
    if outcome.certificate is not None:
        doc["certificate"] = outcome.certificate.to_dict()
    report = outcome.details.get("verification")
    if report is not None:
        doc["verification"] = report.to_dict()
    return doc


def _resolve_system(args) -> LinearSDESystem:
    if args.model and args.builtin:
        raise CLIError("use either --model or --builtin, not both")
    if args.model:
        if args.param:
            raise CLIError("--param only applies to --builtin models")
        try:
            return load_system(args.model)
        except FileNotFoundError:
            raise CLIError(f"model file not found: {args.model}") from None
    if args.builtin:
        params = dict(parse_param(p) for p in args.param)
        return build_builtin(args.builtin, params)
    raise CLIError("a model is required (--model PATH or --builtin NAME)")


def _system_summary(system: LinearSDESystem) -> dict:
    comm = commutativity_report(system)
    return {
        "system": system.to_dict(),
        "commutativity": {
            "a_b_commute": list(comm.a_b_commute),
            "b_b_commute": [list(r) for r in comm.b_b_commute],
            "fully_commuting": comm.fully_commuting,
        },
    }


def _config(args) -> HeuristicConfig:
    return HeuristicConfig(seed=args.seed, restarts=args.restarts, max_outer=args.max_outer)


def _lmi_p2(system, eps):
    lmi = solve_lmi_feasibility(assemble_lmi_p2(system, eps))
    if lmi.status is Status.FEASIBLE:
        checked = check_fixed_q(system, q_matrix(lmi.point, system.n), 2.0, eps)
        checked.certificate_note = "p = 2 LMI; " + checked.certificate_note
        return checked
    return lmi


def cmd_analyze(args) -> int:
    system = _resolve_system(args)
    ps = args.p or [2.0]
    if any(p <= 0 for p in ps) or not args.eps > 0:
        raise CLIError("p and eps must be positive")
    config = _config(args)
    start = time.perf_counter()
    abscissa, stable = mean_square_spectral_test(system)
    timings = {"spectral": time.perf_counter() - start}
    t0 = time.perf_counter()
    lmi = _lmi_p2(system, args.eps)
    timings["lmi_p2"] = time.perf_counter() - t0
    per_p = []
    ok = True
    for p in ps:
        t0 = time.perf_counter()
        outcome = lmi if p == 2.0 else solve_bmi(system, p, args.eps, config)
        timings[f"p={p:g}"] = time.perf_counter() - t0
        ok &= outcome.status is Status.FEASIBLE
        per_p.append({"p": p, "method": "LMI" if p == 2.0 else "BMI", **outcome_to_dict(outcome)})
    doc = {
        "command": "analyze",
        "version": __version__,
        **_system_summary(system),
        "eps": args.eps,
        "seed": args.seed,
        "config": {"restarts": config.restarts, "max_outer": config.max_outer,
                   "threads": thread_count()},
        "spectral_abscissa": abscissa,
        "mean_square_stable": stable,
        "lmi_p2": outcome_to_dict(lmi),
        "results": per_p,
        "timings": timings,
    }
    _emit(doc, args.out)
    for row in per_p:
        print(f"p={row['p']:g}: {row['status']} ({row['note']})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_verify(args) -> int:
    system = _resolve_system(args)
    if not args.cert:
        raise CLIError("--cert is required")
    try:
        cert = load_certificate(args.cert)
    except FileNotFoundError:
        raise CLIError(f"certificate file not found: {args.cert}") from None
    report = verify_certificate(system, cert, method=args.method, seed=args.seed)
    _emit({"command": "verify", "version": __version__, **_system_summary(system),
           "certificate": cert.to_dict(), "method": args.method, "seed": args.seed,
           "verification": report.to_dict()}, args.out)
    print("verification " + ("passed" if report.overall else "failed"), file=sys.stderr)
    return EXIT_OK if report.overall else EXIT_NEGATIVE


def _parse_vector(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise CLIError(f"bad vector {text!r}: {exc}") from None


def cmd_simulate(args) -> int:
    system = _resolve_system(args)
    x0 = _parse_vector(args.x0) if args.x0 else tuple(np.ones(system.n) / math.sqrt(system.n))
    try:
        config = SimulationConfig(x0=x0, horizon=args.horizon, dt=args.dt, paths=args.paths,
                                  seed=args.seed, p_values=tuple(args.p or [2.0]))
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    estimate = euler_maruyama(system, config)
    rates = {f"{p:g}": {"rate": fit.rate, "band": list(fit.band), "blow_up": fit.blow_up}
             for p, fit in estimate.rates.items()}
    doc = {"command": "simulate", "version": __version__, **_system_summary(system),
           "config": {"x0": list(x0), "horizon": args.horizon, "dt": args.dt,
                      "paths": args.paths, "seed": args.seed, "p_values": list(config.p_values)},
           "blow_up_fraction": estimate.blow_up_fraction, "rates": rates}
    if args.out:
        out = Path(args.out)
        tmp = out.with_name(f".{out.name}.tmp")
        write_moment_table(estimate, tmp)
        os.replace(tmp, out)
        doc["moment_table"] = str(out)
    if args.report:
        _emit(doc, args.report)
    else:
        _emit(doc, None)
    return EXIT_OK


def _parse_grid(text: str) -> tuple[float, ...]:
    grid = sorted(set(_parse_vector(text)))
    if not grid:
        raise CLIError("--p-grid must list at least one value")
    return tuple(grid)


def cmd_sweep(args) -> int:
    system = _resolve_system(args)
    grid = _parse_grid(args.p_grid)
    config = HeuristicConfig(seed=args.seed, restarts=args.restarts, max_outer=args.max_outer,
                             p_grid=grid)
    entries = p_sweep(system, args.eps, config)
    rows = [{"p": e.p, "feasible": e.feasible, "source": e.source, **outcome_to_dict(e.outcome)}
            for e in entries]
    _emit({"command": "sweep", "version": __version__, **_system_summary(system),
           "eps": args.eps, "seed": args.seed, "p_grid": list(grid), "results": rows}, args.out)
    print(f"{'p':>8}  {'status':<10}  source", file=sys.stderr)
    for e in entries:
        print(f"{e.p:>8g}  {e.outcome.status.value:<10}  {e.source}", file=sys.stderr)
    return EXIT_OK


def cmd_list(args) -> int:
    seen = {}
    for name, builder in builtin_models().items():
        sig = inspect.signature(builder)
        params = {k: v.default for k, v in sig.parameters.items()
                  if v.default is not inspect.Parameter.empty}
        seen[name] = params
    _emit({"builtins": seen}, args.out)
    return EXIT_OK


def _add_model_flags(sub):
    sub.add_argument("--model", help="model file (JSON)")
    sub.add_argument("--builtin", help="builtin model name (see 'gbmstab list')")
    sub.add_argument("--param", action="append", default=[], metavar="K=V",
                     help="builtin parameter; comma-separated values give a tuple")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbmstab",
        description="p-th moment stability certificates for linear SDEs with multiplicative noise.",
        epilog=f"{THREADS_ENV} bounds the number of worker threads.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    a = subs.add_parser("analyze", help="spectral test, p = 2 LMI and BMI search per p")
    _add_model_flags(a)
    a.add_argument("--p", type=float, action="append", help="moment order (repeatable, default 2)")
    a.add_argument("--eps", type=float, default=0.01)
    a.add_argument("--restarts", type=int, default=20)
    a.add_argument("--max-outer", type=int, default=100)
    a.set_defaults(func=cmd_analyze)

    v = subs.add_parser("verify", help="verify a certificate file")
    _add_model_flags(v)
    v.add_argument("--cert", help="certificate file (JSON with p, eps, c, Q, optional gram)")
    v.add_argument("--method", choices=("gram", "sphere", "both"), default="both")
    v.set_defaults(func=cmd_verify)

    s = subs.add_parser("simulate", help="Euler-Maruyama moment estimates")
    _add_model_flags(s)
    s.add_argument("--p", type=float, action="append", help="moment order (repeatable, default 2)")
    s.add_argument("--x0", help="initial state, comma-separated (default: unit vector of ones)")
    s.add_argument("--paths", type=int, default=10_000)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--horizon", type=float, default=5.0)
    s.add_argument("--report", help="JSON report path (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    w = subs.add_parser("sweep", help="feasibility over a grid of p")
    _add_model_flags(w)
    w.add_argument("--p-grid", default="0.1,0.5,1,2")
    w.add_argument("--eps", type=float, default=0.01)
    w.add_argument("--restarts", type=int, default=20)
    w.add_argument("--max-outer", type=int, default=100)
    w.set_defaults(func=cmd_sweep)

    li = subs.add_parser("list", help="list builtin models and their default parameters")
    li.add_argument("--out")
    li.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except (CLIError, ModelError, ValueError, OSError) as exc:
        print(f"gbmstab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
