"""``odesel`` command-line interface.

Exit codes: 0 success, 1 usage/parse/IO error, 2 numerical failure
(integration or degenerate fit), 3 optimizer non-convergence (the report
with the best point found is still written).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import report as rpt
from .integrator import IntegrationError, IntegratorOptions
from .likelihood import Dataset, DegenerateFitError, FitFailure, FitOptions, fit_mle
from .model_dsl import ModelError, bundled_model, bundled_model_names, load_model
from .simulation import power_study, size_study
from .swtest import DegenerateVarianceError, sw_test
from .tournament import TournamentError, run_tournament

log = logging.getLogger("odesel")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NOCONV = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# input handling
# --------------------------------------------------------------------------


def read_csv(path) -> Dataset:
    """Header row required; first column ``t``, the rest are state names."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t":
        raise UsageError(f"{path}: header must start with column 't' followed by state names")
    try:
        values = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric entry ({exc})") from None
    if values.ndim != 2 or values.shape[1] != len(header):
        raise UsageError(f"{path}: every row needs {len(header)} fields")
    try:
        return Dataset(values[:, 0], values[:, 1:], tuple(header[1:]))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def resolve_model(ref: str):
    """A model file path, or the name of a bundled model."""
    p = Path(ref)
    if p.is_file():
        return load_model(p)
    if ref in bundled_model_names():
        return bundled_model(ref)
    raise UsageError(f"model file not found: {ref} (bundled models: {', '.join(bundled_model_names())})")


def parse_inits(items: Sequence[str], models) -> list[dict]:
    """``NAME=VAL`` applies to every model that has NAME; ``model:NAME=VAL``
    targets one model by its name or 1-based position."""
    out = [dict() for _ in models]
    for item in items or ():
        key, eq, val = item.partition("=")
        if not eq:
            raise UsageError(f"--init expects NAME=VAL, got {item!r}")
        try:
            value = float(val)
        except ValueError:
            raise UsageError(f"--init {item!r}: bad number") from None
        target, colon, name = key.rpartition(":")
        name = name.strip()
        if colon:
            idx = [i for i, m in enumerate(models) if m.name == target or str(i + 1) == target]
            if not idx:
                raise UsageError(f"--init {item!r}: no model named {target!r}")
        else:
            idx = [i for i, m in enumerate(models) if name in m.eta_names]
            if not idx:
                raise UsageError(f"--init {item!r}: no model has a parameter {name!r}")
        for i in idx:
            if name not in models[i].eta_names:
                raise UsageError(f"--init {item!r}: model {models[i].name!r} has no parameter {name!r}")
            out[i][name] = value
    return out


def _options(args) -> FitOptions:
    integ = IntegratorOptions(rel_tol=args.rel_tol, abs_tol=args.abs_tol)
    return FitOptions(restarts=args.restarts, seed=args.seed, integrator=integ)


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return rpt._clean(cfg)


def _write(args, report: dict) -> None:
    text = rpt.to_json(report) if args.format == "json" else rpt.to_markdown(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _check_alpha(args):
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _load_common(args, n_models: Optional[int] = None, at_least: int = 1):
    _check_alpha(args)
    if not args.data:
        raise UsageError("--data is required")
    if not args.model:
        raise UsageError("at least one --model is required")
    if n_models is not None and len(args.model) != n_models:
        raise UsageError(f"{args.command} needs exactly {n_models} --model argument(s), got {len(args.model)}")
    if len(args.model) < at_least:
        raise UsageError(f"{args.command} needs at least {at_least} models, got {len(args.model)}")
    models = [resolve_model(m) for m in args.model]
    data = read_csv(args.data)
    for m in models:
        try:
            data.for_model(m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return models, data, parse_inits(args.init, models)


def cmd_fit(args) -> int:
    models, data, inits = _load_common(args, n_models=1)
    fit = fit_mle(models[0], data, inits[0], _options(args))
    _write(args, rpt.build_report(_config(args), fits=[fit]))
    return EXIT_OK if fit.converged else EXIT_NOCONV


def cmd_test(args) -> int:
    models, data, inits = _load_common(args, n_models=2)
    opts = _options(args)
    fits = [fit_mle(m, data, i, opts) for m, i in zip(models, inits)]
    if models[0].name == models[1].name:
        from dataclasses import replace

        fits = [replace(f, model_name=f"{f.model_name}#{k + 1}") for k, f in enumerate(fits)]
    res = sw_test(fits[0], fits[1], args.alpha)
    _write(args, rpt.build_report(_config(args), fits=fits, tests=[res]))
    return EXIT_OK if all(f.converged for f in fits) else EXIT_NOCONV


def cmd_tournament(args) -> int:
    models, data, inits = _load_common(args, at_least=2)
    tour = run_tournament(models, data, inits, args.alpha, _options(args), bonferroni=args.bonferroni)
    fits = [f for f in tour.fits if f is not None]
    tally = tour.tally()
    extra = {
        "tournament": {
            "alpha": tour.alpha,
            "adjusted_alpha": tour.adjusted_alpha,
            "excluded": dict(tour.excluded),
            "skipped": [[tour.model_names[i], tour.model_names[j]] for i, j in tour.skipped],
            "rows": [
                {
                    "index_a": r.index_a + 1,
                    "index_b": r.index_b + 1,
                    "model_a": tour.model_names[r.index_a],
                    "model_b": tour.model_names[r.index_b],
                    "decision": r.decision.value,
                    "adjusted_decision": None if r.adjusted_decision is None else r.adjusted_decision.value,
                }
                for r in tour.rows
            ],
            "tally": {k: asdict(v) for k, v in tally.items()},
            "ranking": tour.ranking(),
        }
    }
    rep = rpt.build_report(_config(args), fits=fits, tests=[r.result for r in tour.rows], extra=extra)
    _write(args, rep)
    return EXIT_OK if all(f.converged for f in fits) else EXIT_NOCONV


def _floats(text: str, name: str, cast=float) -> list:
    try:
        vals = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected a comma-separated list of numbers") from None
    if not vals:
        raise UsageError(f"{name}: empty list")
    return vals


def cmd_simulate(args) -> int:
    _check_alpha(args)
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    if args.study == "size":
        deltas = _floats(args.delta, "--delta")
        n = args.n if args.n is not None else 300
        tau = args.tau if args.tau is not None else 150.0
        study = size_study(deltas, args.reps, n, tau, args.alpha, args.seed, args.sampling or "uniform")
    else:
        tau = args.tau if args.tau is not None else 40.0
        kw = dict(reps=args.reps, sigma=args.sigma, tau=tau, alpha=args.alpha, seed=args.seed,
                  restarts=args.restarts if args.restarts is not None else 2,
                  sampling=args.sampling or "equispaced")
        if args.n_grid:
            study = power_study(n_grid=_floats(args.n_grid, "--n-grid", int), psi5=args.psi5 or 0.1, **kw)
        else:
            grid = _floats(args.psi5_grid or "0.0025,0.05,0.1,0.25", "--psi5-grid")
            study = power_study(psi5_grid=grid, n=args.n if args.n is not None else 20, **kw)
    _write(args, rpt.build_report(_config(args), study=study))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odesel", description="Select between ODE models with the S-W likelihood-ratio test.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        if data:
            p.add_argument("--data", help="CSV with header 't,<state>,...'")
            p.add_argument("--model", action="append", default=[], help="model file or bundled model name")
            p.add_argument("--init", action="append", default=[], metavar="[MODEL:]NAME=VAL")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--format", choices=("json", "markdown"), default="json")
        p.add_argument("--rel-tol", type=float, default=1e-8)
        p.add_argument("--abs-tol", type=float, default=1e-10)
        p.add_argument("--restarts", type=int, default=None if not data else 8)
        p.add_argument("--verbose", "-v", action="store_true")

    for name, fn, helptext in (
        ("fit", cmd_fit, "fit one model"),
        ("test", cmd_test, "test two models against each other"),
        ("tournament", cmd_tournament, "test every pair among several models"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name == "tournament":
            p.add_argument("--bonferroni", action="store_true", help="also report Bonferroni-adjusted decisions")
        p.set_defaults(func=fn)

    p = sub.add_parser("simulate", help="run a size or power study")
    common(p, data=False)
    p.add_argument("--study", choices=("size", "power"), default="size")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--delta", default="0.1", help="size study: comma-separated shifts")
    p.add_argument("--n", type=int, default=None, help="sample size (size: 300, power: 20)")
    p.add_argument("--tau", type=float, default=None, help="time horizon (size: 150, power: 40)")
    p.add_argument("--sampling", choices=("uniform", "equispaced"), default=None)
    p.add_argument("--psi5-grid", default=None, help="power study: comma-separated psi5 values")
    p.add_argument("--n-grid", default=None, help="power study: comma-separated sample sizes")
    p.add_argument("--psi5", type=float, default=None, help="power study with --n-grid (default 0.1)")
    p.add_argument("--sigma", type=float, default=0.1, help="power study noise s.d.")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "restarts", None) is not None and args.restarts < 0:
        print("odesel: error: --restarts must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ModelError, TournamentError, OSError) as exc:
        print(f"odesel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, DegenerateFitError, DegenerateVarianceError, FitFailure, np.linalg.LinAlgError) as exc:
        print(f"odesel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"odesel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
