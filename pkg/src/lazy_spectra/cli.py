"""Command-line interface: ``lazy-spectra {rho,kappa-c,sweep,verify,series}``.

Exit codes: 0 success, 1 input error, 2 undetermined classification under
``--strict``, 3 violated precondition (e.g. critical laziness of a
rho-recurrent chain), 4 a verification case failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile

from . import __version__
from .chains import HorizonBudgetError, KernelError
from .config import SCHEMA, ConfigError, RunConfig, lazy_set_to_json, load_config, realize
from .lazy import LazySpec, apply_lazy
from .series import first_return_probs, monte_carlo_return_probs, return_probs
from .spectral import (
    PreconditionError,
    Verdict,
    analyze,
    classify_series,
    kappa_critical_bisect,
    kappa_critical_singleton,
    rho_from_first_returns,
    rho_sweep,
)
from .verify import SUITES, run_suite

EPS = sys.float_info.epsilon
EXIT_OK, EXIT_INPUT, EXIT_UNDETERMINED, EXIT_PRECONDITION, EXIT_FAILED = 0, 1, 2, 3, 4


class OutputError(RuntimeError):
    pass


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".lazy-spectra-", dir=directory)
    except OSError as exc:
        raise OutputError(f"cannot write to {directory}: {exc.strerror}") from None
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None


def emit(args, text: str) -> None:
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)


def _csv(header: list[str], rows: list[list], comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}, schema {SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) and not isinstance(v, bool) else v for v in r])
    return buf.getvalue()


def _json(obj: dict) -> str:
    return json.dumps({"schema": SCHEMA, **obj}, indent=2, sort_keys=True) + "\n"


def _config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config: a JSON configuration file is required")
    cfg = load_config(args.config)
    if args.horizon is not None:
        if args.horizon < 8:
            raise ConfigError("--horizon: must be >= 8")
        cfg.horizon = args.horizon
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# commands

def cmd_rho(args) -> int:
    cfg = _config(args)
    real = realize(cfg)
    k = apply_lazy(real.kernel, LazySpec(real.L, cfg.kappa))
    rep = analyze(k, real.x, cfg.horizon, margin=cfg.tolerances["margin"])
    r, c, rr = rep.rho, rep.classification, rep.rho_from_returns
    record = {
        "chain": rep.label, "state": cfg.state if cfg.state is not None else real.x,
        "horizon": cfg.horizon,
        "rho_point": r.point, "rho_uncertainty": r.uncertainty, "rho_lower": r.fekete_lower,
        "rho_source": r.source.value, "rho_stabilized": r.stabilized,
        "rho_returns_point": rr.point, "rho_returns_uncertainty": rr.uncertainty,
        "verdict": c.verdict.value, "u_at_inv_rho": c.u_at_inv_rho, "u_raw": c.u_raw,
        "u_uncertainty": c.u_uncertainty, "u_radius_reciprocal": c.u_radius_reciprocal,
        "radius_uncertainty": c.radius_uncertainty, "margin": c.margin,
    }
    if args.format == "csv":
        emit(args, _csv(list(record), [list(record.values())], "lazy-spectra rho"))
    else:
        emit(args, _json({"command": "rho", **record}))
    if args.strict and c.verdict is Verdict.UNDETERMINED:
        print("classification undetermined within the margin", file=sys.stderr)
        return EXIT_UNDETERMINED
    return EXIT_OK


def cmd_kappa_c(args) -> int:
    cfg = _config(args)
    if cfg.L.kind != "finite" or cfg.L.is_empty:
        raise ConfigError("lazy.set: critical laziness needs a finite, non-empty set")
    singleton = len(cfg.L.states) == 1
    if singleton and cfg.state is None:
        cfg.state = next(iter(cfg.L.states))
    real = realize(cfg, need_outside=not singleton)
    k, N = real.kernel, cfg.horizon
    probe = real.x if singleton else real.outside
    f = first_return_probs(k, probe, N)
    if k.exact_rho is not None:
        rho, rho_unc = k.exact_rho, 0.0
    else:
        est = rho_from_first_returns(f)
        rho, rho_unc = est.point, est.uncertainty
    base = classify_series(f, rho, cfg.tolerances["margin"])
    if base.verdict is not Verdict.RHO_TRANSIENT:
        print(
            f"critical laziness undefined: the base chain is {base.verdict.value} "
            "(rho-recurrent chains have no flat region, rho increases strictly in kappa)",
            file=sys.stderr,
        )
        return EXIT_PRECONDITION
    if singleton:
        kc = kappa_critical_singleton(base.u_raw, rho)
    else:
        kc = kappa_critical_bisect(k, real.L, real.outside, rho, cfg.tolerances["kappa_tol"], N)
    record = {
        "chain": k.label, "lazy_set": lazy_set_to_json(cfg.L), "horizon": N,
        "kappa_c": kc.value, "method": kc.method.value, "residual": kc.residual,
        "bracket_width": kc.bracket_width, "iterations": kc.iterations,
        "rho": rho, "rho_uncertainty": rho_unc, "u_at_inv_rho": base.u_raw,
        "u_uncertainty": base.u_uncertainty,
    }
    if args.format == "csv":
        row = dict(record, lazy_set=json.dumps(record["lazy_set"]))
        emit(args, _csv(list(row), [list(row.values())], "lazy-spectra kappa-c"))
    else:
        emit(args, _json({"command": "kappa-c", **record}))
    return EXIT_OK


SWEEP_COLUMNS = ["kappa", "rho_lower", "rho_point", "rho_uncertainty", "rho_source", "verdict",
                 "u_at_inv_rho", "u_uncertainty", "u_radius_reciprocal", "radius_uncertainty"]


def cmd_sweep(args) -> int:
    cfg = _config(args)
    real = realize(cfg)
    res = rho_sweep(real.kernel, real.L, cfg.kappas, cfg.horizon, x=real.x,
                    margin=cfg.tolerances["margin"])
    rows = []
    for p in res.points:
        c = p.classification
        rows.append([p.kappa, p.rho.fekete_lower, p.rho.point, p.rho.uncertainty, p.rho.source.value,
                     c.verdict.value, c.u_at_inv_rho, c.u_uncertainty, c.u_radius_reciprocal,
                     c.radius_uncertainty])
    if args.format == "csv":
        emit(args, _csv(SWEEP_COLUMNS, rows, f"lazy-spectra sweep of {real.kernel.label}, L={cfg.L.describe()}"))
    else:
        emit(args, _json({
            "command": "sweep", "chain": real.kernel.label, "lazy_set": lazy_set_to_json(cfg.L),
            "horizon": cfg.horizon, "points": [dict(zip(SWEEP_COLUMNS, r)) for r in rows],
            "segments": [{"from": a, "to": b, "shape": s} for a, b, s in res.segments],
        }))
    if args.strict and any(p.classification.verdict is Verdict.UNDETERMINED for p in res.points):
        return EXIT_UNDETERMINED
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = None
    if args.config:
        cfg = _config(args)
    name = args.suite or (cfg.suite if cfg else None) or "all"
    if name not in SUITES:
        raise ConfigError(f"suite: unknown suite {name!r}; valid suites: {', '.join(SUITES)}")
    N = cfg.horizon if cfg else (args.horizon or 2000)
    kw = {}
    if cfg is not None and args.config_chain:
        real = realize(cfg, need_outside=True)
        kw = {"chain": real.kernel, "L": real.L if not real.L.is_empty else None}
        if cfg.kappas:
            kw["grid"] = cfg.kappas
    margin = cfg.tolerances["margin"] if cfg else 1e-4
    rep = run_suite(name, N, margin=margin, **kw)
    if args.format is None:
        text = rep.to_text() + "\n"
    elif args.format == "csv":
        rows = [[c.description, c.status, "" if c.value is None else c.value,
                 "" if c.tolerance is None else c.tolerance, c.detail] for c in rep.cases]
        text = _csv(["case", "status", "value", "tolerance", "detail"], rows, f"lazy-spectra verify {name}")
    else:
        text = rep.to_json() + "\n"
    emit(args, text)
    if args.output:
        print(rep.to_text())
    return EXIT_OK if rep.ok else EXIT_FAILED


def cmd_series(args) -> int:
    cfg = _config(args)
    real = realize(cfg)
    k = apply_lazy(real.kernel, LazySpec(real.L, cfg.kappa))
    if args.samples:
        s = monte_carlo_return_probs(k, real.x, cfg.horizon, args.samples, cfg.seed)
        err = s.stderr()
        rows = [[n, float(c), float(e)] for n, (c, e) in enumerate(zip(s.coeffs, err))]
        header = ["n", "coeff", "stderr"]
    else:
        s = (first_return_probs if args.kind == "first-return" else return_probs)(k, real.x, cfg.horizon)
        rows = [[n, float(c), n * EPS] for n, c in enumerate(s.coeffs)]  # at most one rounding per step
        header = ["n", "coeff", "rounding_bound"]
    if args.format == "json":
        emit(args, _json({"command": "series", "kind": s.kind.value, "chain": k.label,
                          "state": real.x, "samples": s.samples,
                          "rows": [dict(zip(header, r)) for r in rows]}))
    else:
        emit(args, _csv(header, rows, f"lazy-spectra {s.kind.value} series of {k.label}"))
    return EXIT_OK


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse's own code 2 means "undetermined" here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--output", metavar="PATH", help="write results here (atomically)")
    common.add_argument("--format", choices=("csv", "json"), default=None, help="output format")
    common.add_argument("--horizon", type=int, metavar="N", help="override the DP horizon")
    common.add_argument("--strict", action="store_true", help="exit 2 on undetermined verdicts")
    common.add_argument("--seed", type=int, metavar="K", help="override the random seed")

    parser = _Parser(
        prog="lazy-spectra",
        description="Spectral radii and rho-recurrence of (L, kappa)-lazy Markov chains.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("rho", parents=[common], help="spectral radius and classification").set_defaults(fn=cmd_rho)
    sub.add_parser("kappa-c", parents=[common], help="critical laziness of a finite set").set_defaults(fn=cmd_kappa_c)
    sub.add_parser("sweep", parents=[common], help="rho over a kappa grid").set_defaults(fn=cmd_sweep)
    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("--suite", help=f"one of {', '.join(SUITES)}")
    v.add_argument("--config-chain", action="store_true",
                   help="run the suite on the configured chain instead of the built-in cases")
    v.set_defaults(fn=cmd_verify)
    s = sub.add_parser("series", parents=[common], help="export return or first-return coefficients")
    s.add_argument("--kind", choices=("return", "first-return"), default="return")
    s.add_argument("--samples", type=int, default=0, help="Monte Carlo estimate with this many paths")
    s.set_defaults(fn=cmd_series)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None and args.command != "verify":
        args.format = "json"
    try:
        return args.fn(args)
    except PreconditionError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ConfigError, KernelError, ValueError, HorizonBudgetError, OutputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
