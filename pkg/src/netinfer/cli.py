"""Command-line interface: estimate, simulate, oracle, sweep, validate."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io as _io
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .design import GroupProportion, Intervention, KeyProportion
from .errors import NetInferError, SchemaError
from .estimators import Estimand, point_estimate
from .io import load_bundle, load_potentials, reject_overlap
from .oracle import exact_estimand, exact_moments
from .report import METHODS, analyze, dumps, format_float
from .variance.lipschitz import LipschitzSpec

ALPHA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
ESTIMAND_CHOICES = ("tau", "mu", "de", "ie", "te", "tau_multi")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level")
    p.add_argument("--mc-draws", type=int, default=None, help="Monte Carlo draws when a support is too large to enumerate")
    p.add_argument("--deterministic", action="store_true", help="omit run timestamps so outputs are byte-stable")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    return p


def _data_args(p: argparse.ArgumentParser, observed: bool = True) -> None:
    p.add_argument("--units", required=True)
    p.add_argument("--keymap", required=True)
    if observed:
        p.add_argument("--assignment", required=True)
        p.add_argument("--outcomes", required=True)
    p.add_argument("--design", required=True, help="design JSON file or literal")
    p.add_argument("--intervention", default=None, help="intervention JSON file or literal (default: the design, unrestricted)")
    p.add_argument("--intervention-tilde", default=None, help="second intervention for ie/te")


def _estimand_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimand", choices=ESTIMAND_CHOICES, default="mu")
    p.add_argument("--a", type=int, choices=(0, 1), default=1, help="key-unit arm for mu and ie")
    p.add_argument("--p-star", type=float, default=None, help="treated share of key units for tau_multi")


def _variance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=("ht", "hajek", "both"), default="ht")
    p.add_argument("--variance", choices=METHODS, default=None, help="variance method (default by estimand)")
    p.add_argument("--lipschitz-c", type=float, default=None, help="C(n) = c / sqrt(n)")
    p.add_argument("--lipschitz-dist", choices=("l1",), default="l1")
    p.add_argument("--outcome-bound", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="netinfer", description=__doc__, parents=[common])
    parser.add_argument("--version", action="version", version=f"netinfer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="point estimate, variance and interval")
    _data_args(p)
    _estimand_args(p)
    _variance_args(p)

    p = sub.add_parser("oracle", parents=[common], help="exact estimand and estimator moments from a potential-outcome table")
    _data_args(p, observed=False)
    _estimand_args(p)
    p.add_argument("--table", required=True, help="potentials.csv")

    p = sub.add_parser("sweep", parents=[common], help="group-proportion estimates over a grid of shares")
    _data_args(p)
    _variance_args(p)
    p.add_argument("--group-field", required=True)
    p.add_argument("--alphas", default=",".join(str(a) for a in ALPHA_GRID), help="comma-separated shares")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo study")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--plot-data", default=None, help="directory for long-format plotting data")

    p = sub.add_parser("validate", parents=[common], help="load inputs and report violations")
    p.add_argument("--units", required=True)
    p.add_argument("--keymap", required=True)
    p.add_argument("--assignment", default=None)
    p.add_argument("--outcomes", default=None)
    p.add_argument("--design", default=None)
    p.add_argument("--intervention", default=None)
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _stamp(payload: dict, args) -> dict:
    if not args.deterministic:
        payload.setdefault("diagnostics", {})["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    return payload


def make_estimand(args, bundle) -> Estimand:
    designs = bundle.designs
    iv = bundle.intervention or Intervention(designs)
    kind = args.estimand
    if kind == "tau":
        return Estimand.tau(iv)
    if kind == "mu":
        return Estimand.mu(iv.laws, args.a)
    if kind == "de":
        return Estimand.de(iv.laws)
    if kind == "tau_multi":
        p_star = args.p_star
        if p_star is None and isinstance(iv.admissible, KeyProportion):
            p_star = iv.admissible.p_star
        if p_star is None:
            raise SchemaError("tau_multi needs --p-star or a key_proportion intervention")
        return Estimand.tau_multi(p_star)
    if bundle.intervention_tilde is None:
        raise SchemaError(f"{kind} needs --intervention-tilde")
    tilde = bundle.intervention_tilde.laws
    if kind == "ie":
        return Estimand.ie(iv.laws, tilde, args.a)
    return Estimand.te(iv.laws, tilde)


def _lipschitz(args) -> LipschitzSpec | None:
    if args.variance != "lipschitz":
        return None
    if args.lipschitz_c is None:
        raise SchemaError("--variance lipschitz needs --lipschitz-c")
    bound = args.outcome_bound if args.outcome_bound is not None else float("inf")
    return LipschitzSpec(c=args.lipschitz_c, distance=args.lipschitz_dist, outcome_bound=bound)


def _estimators(args) -> list[str]:
    return ["ht", "hajek"] if args.estimator == "both" else [args.estimator]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    bundle = load_bundle(args.units, args.keymap, args.assignment, args.outcomes, args.design, args.intervention, args.intervention_tilde)
    estimand = make_estimand(args, bundle)
    spec = _lipschitz(args)
    reports = []
    for est in _estimators(args):
        r = analyze(
            bundle.frame,
            bundle.designs,
            estimand,
            bundle.observed,
            est,
            args.variance,
            args.alpha,
            spec,
            args.mc_draws,
            args.seed,
        )
        reports.append(_stamp(r.to_dict(), args))
    payload = reports[0] if len(reports) == 1 else reports
    _emit(dumps(payload) + "\n", args.out)
    return 0


def cmd_oracle(args) -> int:
    bundle = load_bundle(args.units, args.keymap, None, None, args.design, args.intervention, args.intervention_tilde)
    table = load_potentials(args.table, bundle.frame)
    estimand = make_estimand(args, bundle)
    frame, designs = bundle.frame, bundle.designs
    value = exact_estimand(frame, estimand, table, designs)

    def stat(obs):
        pe = point_estimate(frame, designs, estimand, obs)
        return (pe.ht, pe.hajek if pe.hajek is not None else float("nan"))

    m = exact_moments(frame, designs, table, stat)
    hajek_defined = m.mean[1] == m.mean[1]
    payload = {
        "estimand": estimand.to_dict(),
        "value": value,
        "ht": {"mean": float(m.mean[0]), "variance": float(m.covariance[0, 0])},
        "hajek": {"mean": float(m.mean[1]), "variance": float(m.covariance[1, 1])} if hajek_defined else None,
        "support_size": m.support_size,
        "method": "oracle",
    }
    _emit(dumps(_stamp(payload, args)) + "\n", args.out)
    return 0


SWEEP_COLUMNS = ("alpha", "estimator", "point", "variance", "se", "ci_lo", "ci_hi", "method", "error_code", "error")


def cmd_sweep(args) -> int:
    bundle = load_bundle(args.units, args.keymap, args.assignment, args.outcomes, args.design, args.intervention)
    try:
        grid = [float(x) for x in args.alphas.split(",") if x.strip()]
    except ValueError:
        raise SchemaError("--alphas must be comma-separated numbers") from None
    base = bundle.intervention.laws if bundle.intervention else bundle.designs
    spec = _lipschitz(args)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for share in grid:
        iv = Intervention(tuple(base), GroupProportion(args.group_field, share))
        for est in _estimators(args):
            try:
                reject_overlap(bundle.frame, bundle.designs, iv)
                r = analyze(
                    bundle.frame, bundle.designs, Estimand.tau(iv), bundle.observed, est, args.variance, args.alpha, spec, args.mc_draws, args.seed
                )
                hi = r.variance[1] if isinstance(r.variance, tuple) else r.variance
                w.writerow([format_float(share), est, format_float(r.point), format_float(hi), format_float(r.se)]
                           + [format_float(r.ci[0]), format_float(r.ci[1]), r.method, "", ""])
            except NetInferError as exc:
                w.writerow([format_float(share), est, "", "", "", "", "", args.variance or "", exc.exit_code, str(exc)])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_simulate(args) -> int:
    from .simulation import aggregate, load_grid, run, write_plot_data, write_results

    configs = load_grid(args.config, reps=args.reps, seed=args.seed, alpha=args.alpha)
    results, rows = [], []
    for cfg in configs:
        pop, reps = run(cfg)
        agg = aggregate(pop, reps)
        rows += agg
        results.append((pop, reps, agg))
    out = args.out or "results.csv"
    write_results(rows, out)
    if args.plot_data:
        write_plot_data(results, args.plot_data)
    return 0


def cmd_validate(args) -> int:
    bundle = load_bundle(args.units, args.keymap, args.assignment, args.outcomes, args.design, args.intervention)
    if bundle.intervention is not None:
        reject_overlap(bundle.frame, bundle.designs, bundle.intervention)
    payload = {
        "ok": True,
        "clusters": bundle.frame.K,
        "intervention_units": sum(c.n for c in bundle.frame),
        "target_units": sum(c.size_s for c in bundle.frame),
        "multi_key": any(not c.is_single_key for c in bundle.frame),
        "observed": bundle.observed is not None,
    }
    _emit(dumps(payload) + "\n", args.out)
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "oracle": cmd_oracle,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NetInferError as exc:
        err = {"error": exc.code, "exit_code": exc.exit_code, "message": str(exc)}
        if getattr(exc, "issues", None):
            err["issues"] = exc.issues
        sys.stderr.write(dumps(err) + "\n")
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
