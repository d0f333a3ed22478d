"""Command-line front end: one subcommand per operation, JSON reports on stdout."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import os
import sys
from importlib import resources

import numpy as np

from . import modulus as _modulus
from . import quadrature as _quad
from . import spectral as _spectral
from . import verify as _verify
from .domains import Rect, parse_domain
from .errors import (
    DomainError,
    InconclusiveError,
    NonConvergenceError,
    ParameterError,
    QconfError,
    ResolutionError,
    SingularityError,
    UnsupportedMapError,
)
from .mappings import DilatationKind, PlanarPoint, dilatation, evaluate, jacobian, parse_map

log = logging.getLogger("qconf")

EXIT_OK, EXIT_UNSATISFIED, EXIT_PARAMETER, EXIT_SOLVER = 0, 1, 2, 3
SIG_DIGITS = 12

DEFAULT_CONFIG = {
    "spectral.tol": 1e-10,
    "spectral.h": 1.0 / 128,
    "spectral.max_iters": 500,
    "modulus.tol": 5e-3,
}


class Outcome(Exception):
    """Carries a finished report together with a non-zero exit code."""

    def __init__(self, code, result):
        super().__init__(code)
        self.code = code
        self.result = result


# -- serialization --------------------------------------------------------------------


def to_jsonable(obj):
    """Round floats to 12 significant digits; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.{SIG_DIGITS}g}")
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True)


def envelope(command: str, status: str, result) -> dict:
    return {
        "command": command,
        "status": status,
        "result": result,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


# -- config -----------------------------------------------------------------------------


def load_config(path) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParameterError("config must be a JSON object")

    def flatten(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict):
                yield from flatten(v, f"{prefix}{k}.")
            else:
                yield f"{prefix}{k}", v

    cfg.update(flatten(raw))
    return cfg


def apply_thread_cap(env=os.environ):
    value = env.get("QCONF_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError as exc:
        raise ParameterError(f"QCONF_THREADS must be an integer, got {value!r}") from exc
    if n < 1:
        raise ParameterError("QCONF_THREADS must be positive")
    import numba

    # the bundled TBB is often too old for numba; try the other layers first
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


# -- argument helpers -------------------------------------------------------------------------


def _pair(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y but got {text!r}") from exc
    return x, y


def _box(text):
    try:
        x0, x1, y0, y1 = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x0,x1,y0,y1 but got {text!r}") from exc
    if not (x1 > x0 and y1 > y0):
        raise argparse.ArgumentTypeError(f"empty box {text!r}")
    return Rect(x1 - x0, y1 - y0, x0, y0)


def _real(text):
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _spacing(args, fallback=None):
    if getattr(args, "h", None) is not None:
        return args.h
    if getattr(args, "grid", None) is not None:
        if args.grid <= 0:
            raise ParameterError("--grid must be positive")
        return 1.0 / args.grid
    if fallback is None:
        raise ParameterError("give --grid N or --h")
    return fallback


def _add_resolution(p, default_grid=None):
    p.add_argument("--grid", type=int, default=default_grid, help="cells per unit length (h = 1/N)")
    p.add_argument("--h", type=float, default=None, help="grid spacing (overrides --grid)")


def _status(report) -> tuple[int, str]:
    details = report.details if hasattr(report, "details") else {}
    if details.get("inconclusive") or details.get("divergent"):
        return EXIT_SOLVER, "inconclusive"
    return (EXIT_OK, "satisfied") if report.satisfied else (EXIT_UNSATISFIED, "unsatisfied")


# -- subcommands ---------------------------------------------------------------------------


def cmd_dilatation(args, cfg):
    m = parse_map(args.map)
    kind = DilatationKind.parse(args.kind, p=args.p, q=args.q)
    pt = PlanarPoint(*args.point)
    value = dilatation(m, pt, kind, args.norm)
    return {"map": m.spec(), "point": list(args.point), "kind": kind.tag, "param": kind.param,
            "norm": args.norm, "value": value}


def cmd_jacobian(args, cfg):
    m = parse_map(args.map)
    pt = PlanarPoint(*args.point)
    image = evaluate(m, pt)
    out = jacobian(m, pt).to_dict()
    out.update(map=m.spec(), point=list(args.point), image=[image.x, image.y])
    return out


def cmd_opnorm(args, cfg):
    m = parse_map(args.map)
    domain = parse_domain(args.domain)
    if args.functional:
        value = _quad.sup_functional(m, domain, args.functional, args.norm, method=args.method)
        return {"map": m.spec(), "domain": domain.spec(), "functional": args.functional,
                "norm": args.norm, "value": value}
    rep = _quad.composition_norm_bound(
        m, domain, args.p, args.q, args.norm, rel_tol=args.rel_tol,
        multiplicity=args.multiplicity, mode=args.mode,
    )
    out = {"map": m.spec(), "domain": domain.spec(), "norm": args.norm, "mode": args.mode, **rep.to_dict()}
    out["divergent"] = rep.quadrature.divergent
    if rep.quadrature.divergent or not rep.quadrature.converged:
        raise Outcome(EXIT_SOLVER, out)
    return out


def cmd_hnorm(args, cfg):
    m = parse_map(args.map)
    target = parse_domain(args.domain)
    rep = _quad.h_norm_bound(m, target, args.p, args.q, args.norm, rel_tol=args.rel_tol)
    out = {"map": m.spec(), "domain": target.spec(), "norm": args.norm, **rep.to_dict()}
    out["divergent"] = rep.quadrature.divergent
    if rep.quadrature.divergent or not rep.quadrature.converged:
        raise Outcome(EXIT_SOLVER, out)
    return out


def cmd_modulus(args, cfg):
    domain = parse_domain(args.domain)
    family = _modulus.CurveFamily.parse(args.family)
    h = _spacing(args)
    tol = args.tol if args.tol is not None else cfg["modulus.tol"]
    grid = _modulus.build_grid(domain, h)
    if args.map:
        m = parse_map(args.map)
        sol = _modulus.pushforward_modulus(m, grid, family, tol, stencil=args.stencil)
    else:
        sol = _modulus.discrete_modulus(grid, family, tol=tol, stencil=args.stencil)
    out = {"domain": domain.spec(), "family": family.spec(), "h": h, "tol": tol, **sol.to_dict()}
    if args.map:
        out["map"] = args.map
    if args.capacity:
        out["capacity"] = _modulus.discrete_capacity(sol.marked)
    if args.density_csv:
        mg = sol.marked
        np.savetxt(args.density_csv, np.column_stack([mg.centers, sol.density]), delimiter=",",
                   header="x,y,rho", comments="", fmt="%.12g")
    return out


def cmd_verify_q(args, cfg):
    m = parse_map(args.map)
    domain = parse_domain(args.domain)
    family = _modulus.CurveFamily.parse(args.family)
    tol = args.tol if args.tol is not None else cfg["modulus.tol"]
    rep = _verify.q_inequality_check(m, domain, family, _spacing(args), slack=args.slack, tol=tol)
    return rep


def cmd_verify_measure(args, cfg):
    m = parse_map(args.map)
    domain = parse_domain(args.domain) if args.domain else None
    if not args.box:
        raise ParameterError("give at least one --box x0,x1,y0,y1")
    return _verify.measure_distortion_check(m, args.box, args.q, _spacing(args), domain=domain,
                                            convention=args.norm)


def cmd_verify_poincare(args, cfg):
    m = parse_map(args.map)
    domain = parse_domain(args.domain) if args.domain else None
    names = [f for f in args.functions.split(",") if f]
    reports = _verify.weighted_poincare_check(
        m, args.s, args.p, names, _spacing(args), q=args.q, domain=domain,
        b_constant=args.b_constant, convention=args.norm,
    )
    ok = all(r.satisfied for r in reports)
    inconclusive = any(r.details.get("inconclusive") for r in reports)
    out = {"map": m.spec(), "satisfied": ok, "reports": [r.to_dict() for r in reports]}
    if inconclusive:
        raise Outcome(EXIT_SOLVER, out)
    if not ok:
        raise Outcome(EXIT_UNSATISFIED, out)
    return out


def cmd_dual(args, cfg):
    return _verify.dual_exponents(args.p, args.q, args.n, args.mode)


def cmd_spectral(args, cfg):
    tol = args.tol if args.tol is not None else float(cfg["spectral.tol"])
    max_iters = args.max_iters if args.max_iters is not None else int(cfg["spectral.max_iters"])
    h = _spacing(args, float(cfg["spectral.h"]))
    if args.poincare:
        return {"kind": args.poincare, "L": args.L, "value": _spectral.poincare_bound(args.poincare, args.L)}
    if args.domain:
        domain = parse_domain(args.domain)
        spacings = [h] + [1.0 / n for n in (args.also_grid or [])]
        reports = [_spectral.neumann_mu1(domain, hh, tol, max_iters=max_iters) for hh in spacings]
        if args.csv:
            _spectral.write_convergence_csv(args.csv, reports)
        out = {"domain": domain.spec(), **reports[0].to_dict()}
        if len(reports) > 1:
            out["convergence"] = [r.to_dict() for r in reports]
        return out
    if args.alpha is None:
        raise ParameterError("spectral needs --alpha, --domain or --poincare")
    rep = _spectral.cusp_spectral_bound(args.alpha, args.fd_check, h, tol=tol, max_iters=max_iters)
    out = rep.to_dict()
    if rep.satisfied is False:
        raise Outcome(EXIT_UNSATISFIED, out)
    if args.fd_check and rep.numerical_mu1 is None:
        raise Outcome(EXIT_SOLVER, out)
    return out


COMMANDS = {
    "dilatation": cmd_dilatation,
    "jacobian": cmd_jacobian,
    "opnorm": cmd_opnorm,
    "hnorm": cmd_hnorm,
    "modulus": cmd_modulus,
    "verify-q": cmd_verify_q,
    "verify-measure": cmd_verify_measure,
    "verify-poincare": cmd_verify_poincare,
    "dual": cmd_dual,
    "spectral": cmd_spectral,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParameterError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qconf", description=__doc__)
    parser.add_argument("--config", help="JSON config file (keys such as spectral.tol)")
    parser.add_argument("--output", "-o", help="write the JSON report here as well as to stdout")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    norm_kw = dict(choices=["spectral", "frobenius"], default="spectral")

    p = sub.add_parser("dilatation", help="pointwise distortion functional")
    p.add_argument("--map", required=True)
    p.add_argument("--point", type=_pair, required=True)
    p.add_argument("--kind", default="outer", help="outer, inner, pdil[:p], hq[:q], qfield[:c]")
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--norm", **norm_kw)

    p = sub.add_parser("jacobian", help="derivative data at a point")
    p.add_argument("--map", required=True)
    p.add_argument("--point", type=_pair, required=True)

    p = sub.add_parser("opnorm", help="composition operator norm bound or sup functional")
    p.add_argument("--map", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--p", type=_real, default=2.0)
    p.add_argument("--q", type=_real, default=1.0)
    p.add_argument("--norm", **norm_kw)
    p.add_argument("--mode", choices=["quadrature", "antiderivative"], default="quadrature")
    p.add_argument("--multiplicity", type=float, default=1.0)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--functional", choices=list(_quad.SUP_FUNCTIONALS))
    p.add_argument("--method", choices=["auto", "exact", "grid"], default="auto")

    p = sub.add_parser("hnorm", help="norm of H_q over the target domain")
    p.add_argument("--map", required=True)
    p.add_argument("--domain", required=True, help="target domain")
    p.add_argument("--p", type=_real, default=2.0)
    p.add_argument("--q", type=_real, default=1.0)
    p.add_argument("--norm", **norm_kw)
    p.add_argument("--rel-tol", type=float, default=1e-8)

    p = sub.add_parser("modulus", help="discrete modulus of a curve family")
    p.add_argument("--domain", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--map", help="push the family forward under this map")
    _add_resolution(p, 64)
    p.add_argument("--tol", type=float)
    p.add_argument("--stencil", type=int, default=3)
    p.add_argument("--capacity", action="store_true", help="also solve the condenser problem")
    p.add_argument("--density-csv", help="dump the extremal density as x,y,rho")

    p = sub.add_parser("verify-q", help="modulus inequality with the inner dilatation")
    p.add_argument("--map", required=True)
    p.add_argument("--domain", default="unitsquare")
    p.add_argument("--family", default="opposite-sides:x")
    _add_resolution(p, 64)
    p.add_argument("--slack", type=float, default=0.1)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("verify-measure", help="measure distortion of target boxes")
    p.add_argument("--map", required=True)
    p.add_argument("--box", type=_box, action="append", help="x0,x1,y0,y1 (repeatable)")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--domain", help="source domain (default: natural domain of the map)")
    p.add_argument("--norm", **norm_kw)
    _add_resolution(p, 128)

    p = sub.add_parser("verify-poincare", help="weighted Poincaré inequality on the image")
    p.add_argument("--map", required=True)
    p.add_argument("--s", type=float, default=2.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--functions", default="x,y,xy,sin_x,sin_y")
    p.add_argument("--domain", help="source domain (default: natural domain of the map)")
    p.add_argument("--b-constant", type=float)
    p.add_argument("--norm", **norm_kw)
    _add_resolution(p, 64)

    p = sub.add_parser("dual", help="dual exponents")
    p.add_argument("--p", type=_real, required=True)
    p.add_argument("--q", type=_real, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--mode", choices=["sobolev", "holder"], default="sobolev")

    p = sub.add_parser("spectral", help="cusp eigenvalue bound, Neumann eigenvalues, Poincaré constants")
    p.add_argument("--alpha", type=float)
    p.add_argument("--fd-check", action="store_true", help="compare with a finite-difference eigenvalue")
    p.add_argument("--domain", help="compute mu1 of this domain instead")
    p.add_argument("--also-grid", type=int, nargs="*", help="extra resolutions for a convergence table")
    p.add_argument("--csv", help="write the convergence table here")
    p.add_argument("--poincare", choices=list(_spectral.POINCARE_KINDS) + ["square", "diamond"])
    p.add_argument("--L", type=float)
    _add_resolution(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)

    p = sub.add_parser("suite", help="run a JSON list of checks")
    p.add_argument("path", nargs="?", help="suite file (default: bundled reference suite)")
    return parser


# -- dispatch -----------------------------------------------------------------------------


def _classify(exc: Exception) -> int:
    if isinstance(exc, (ParameterError, DomainError, SingularityError, UnsupportedMapError)):
        return EXIT_PARAMETER
    if isinstance(exc, (NonConvergenceError, ResolutionError, InconclusiveError)):
        return EXIT_SOLVER
    return EXIT_SOLVER


def execute(command: str, args, cfg) -> tuple[int, dict]:
    """Run one subcommand and return ``(exit code, envelope)``."""
    try:
        result = COMMANDS[command](args, cfg)
        code = EXIT_OK
        if isinstance(result, _verify.InequalityReport):
            code, status = _status(result)
            result = result.to_dict()
        else:
            status = "ok"
    except Outcome as out:
        code, result = out.code, out.result
        status = {EXIT_UNSATISFIED: "unsatisfied", EXIT_SOLVER: "inconclusive"}.get(code, "error")
    except QconfError as exc:
        code = _classify(exc)
        result = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NonConvergenceError) and exc.best is not None:
            result["best"] = exc.best
        status = "error"
    return code, envelope(command, status, result)


def _check_expectations(env: dict, expect: dict) -> list[str]:
    """``expect`` maps dotted paths in the result to a value or ``{"value", "rel_tol"}``."""
    failures = []
    for path, want in expect.items():
        node = env["result"]
        try:
            for key in path.split("."):
                node = node[int(key)] if isinstance(node, list) else node[key]
        except (KeyError, IndexError, ValueError, TypeError):
            failures.append(f"{path}: missing")
            continue
        if isinstance(want, dict):
            target, rel = float(want["value"]), float(want.get("rel_tol", 0.0))
            got = float(node) if not isinstance(node, str) else float(node)
            if not abs(got - target) <= rel * abs(target):
                failures.append(f"{path}: {got!r} not within {rel:g} of {target!r}")
        elif node != want:
            failures.append(f"{path}: {node!r} != {want!r}")
    return failures


def _suite_argv(check: dict) -> list[str]:
    argv = [check["command"]]
    for key, val in check.get("args", {}).items():
        flag = "--" + key.replace("_", "-")
        if val is True:
            argv.append(flag)
        elif val is False or val is None:
            continue
        elif isinstance(val, list):
            for item in val:
                argv += [flag, str(item)]
        else:
            argv += [flag, str(val)]
    return argv


def run_suite(path, cfg) -> tuple[int, list]:
    if path is None:
        text = resources.files("qconf").joinpath("data/default_suite.json").read_text()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ParameterError(f"cannot read suite {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"suite is not valid JSON: {exc}") from exc
    checks = raw.get("checks", []) if isinstance(raw, dict) else raw
    if isinstance(raw, dict) and "config" in raw:
        cfg = {**cfg, **{k: v for k, v in raw["config"].items()}}
    parser = build_parser()
    results, codes = [], []
    for i, check in enumerate(checks):
        name = check.get("name", f"check-{i}")
        try:
            args = parser.parse_args(_suite_argv(check))
            if args.command == "suite":
                raise ParameterError("suites cannot nest")
            code, env = execute(args.command, args, cfg)
        except (ParameterError, KeyError) as exc:
            code, env = EXIT_PARAMETER, envelope(check.get("command", "?"), "error",
                                                 {"error": type(exc).__name__, "message": str(exc)})
        if code == EXIT_OK and check.get("expect"):
            failures = _check_expectations(json.loads(dumps(env)), check["expect"])
            if failures:
                code, env["status"] = EXIT_UNSATISFIED, "unsatisfied"
                env["failures"] = failures
        env["name"] = name
        env["exit_code"] = code
        results.append(env)
        codes.append(code)
        log.info("%-32s %s", name, "PASS" if code == EXIT_OK else env["status"].upper())
    for code in (EXIT_SOLVER, EXIT_PARAMETER, EXIT_UNSATISFIED):
        if code in codes:
            return code, results
    return EXIT_OK, results


def run(argv: list[str] | None = None, *, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_PARAMETER
    try:
        apply_thread_cap()
        cfg = load_config(args.config)
        if args.command == "suite":
            code, report = run_suite(args.path, cfg)
        else:
            code, report = execute(args.command, args, cfg)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    text = dumps(report)
    print(text, file=stdout)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
