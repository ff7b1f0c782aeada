"""``obspop`` command line.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 finished but some replicates failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import CaptureDataError, read_csv
from .dpsampler import run_chain
from .lengthbias import reports_to_csv, reports_to_json, risk_study
from .loglinear import FAMILIES, estimate_n_alpha_parametric, fit_family
from .observability import UnattainableTarget, alpha_for_target, thm1_bound
from .report import MissingStudyArtifacts, render_report
from .stochastic import make_rng
from .study import (
    FULL_R,
    ConfigError,
    StudyConfig,
    draws_csv,
    dumps,
    load_config,
    run_simulate,
    run_study,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("obspop")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes for replicates")
    common.add_argument("--full", action="store_true", help=f"use R={FULL_R} replicates")

    p = argparse.ArgumentParser(prog="obspop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate populations and their truths")
    s.add_argument("--scenarios", type=int, nargs="+")
    s.add_argument("--R", type=int)

    s = sub.add_parser("fit-dp", parents=[common], help="fit the Dirichlet-process model to a CSV of histories")
    s.add_argument("input", type=Path)
    s.add_argument("--iters", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--K", type=int)

    s = sub.add_parser("fit-loglinear", parents=[common], help="fit parametric log-linear baselines")
    s.add_argument("input", type=Path)
    s.add_argument("--family", choices=FAMILIES + ("all",), default="all")

    sub.add_parser("risk-study", parents=[common], help="Monte Carlo risk of length-bias estimators")

    s = sub.add_parser("bound", parents=[common], help="observation bound for an alpha-observable set")
    s.add_argument("--eps", type=float, required=True, help="F-mass of the set")
    s.add_argument("--N", type=int, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--alpha", type=float)
    g.add_argument("--target", type=float, help="solve for the alpha reaching this probability")

    s = sub.add_parser("study", parents=[common], help="simulate, fit and tabulate")
    s.add_argument("--scenarios", type=int, nargs="+")
    s.add_argument("--R", type=int)

    s = sub.add_parser("report", parents=[common], help="render figures for a study directory")
    s.add_argument("study_dir", type=Path)
    return p


def _config(args) -> StudyConfig:
    cfg = load_config(args.config) if args.config else StudyConfig()
    upd = {}
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.full:
        upd["R"] = FULL_R
    if getattr(args, "R", None) is not None:
        upd["R"] = args.R
    if getattr(args, "scenarios", None):
        upd["scenarios"] = tuple(args.scenarios)
    chain = {k: getattr(args, k) for k in ("iters", "burn_in", "thin") if getattr(args, k, None) is not None}
    if chain:
        try:
            upd["chain"] = replace(cfg.chain, **chain)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if getattr(args, "K", None) is not None:
        upd["prior"] = replace(cfg.prior, K=args.K)
    try:
        return replace(cfg, **upd) if upd else cfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(cfg, args) -> int:
    recs = run_simulate(cfg, args.out, args.workers)
    print(f"wrote {len(recs)} populations to {args.out}")
    return EXIT_OK


def cmd_fit_dp(cfg, args) -> int:
    ds = read_csv(args.input)
    res = run_chain(
        make_rng(cfg.seed, 0, 0, "fit"), ds, cfg.prior, iters=cfg.chain.iters,
        burn_in=cfg.chain.burn_in, thin=cfg.chain.thin, alpha_grid=cfg.alpha_grid,
        q_levels=cfg.chain.q_levels,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "draws.csv").write_text(draws_csv(res, res.alpha_grid))
    summary = res.summary()
    summary["input"] = str(args.input)
    summary["seed"] = cfg.seed
    (args.out / "summary.json").write_text(dumps(summary))
    print(json.dumps({"N": summary["N"], "N_LB": summary["N_LB"]}, indent=2))
    return EXIT_OK


def cmd_fit_loglinear(cfg, args) -> int:
    ds = read_csv(args.input)
    fams = FAMILIES if args.family == "all" else (args.family,)
    out, failed = {}, 0
    for fam in fams:
        try:
            fit = fit_family(ds, fam)
            d = fit.to_dict()
            d["N_alpha"] = {}
            for a in cfg.alpha_grid:
                try:
                    d["N_alpha"][f"{a:g}"] = estimate_n_alpha_parametric(fit, a)
                except ArithmeticError as exc:
                    d["N_alpha"][f"{a:g}"] = None
                    d.setdefault("N_alpha_errors", {})[f"{a:g}"] = str(exc)
            out[fam] = d
        except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out[fam] = {"error": f"{type(exc).__name__}: {exc}"}
            failed += 1
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "loglinear.json").write_text(dumps(out))
    for fam, d in out.items():
        print(f"{fam:18s} " + (d["error"] if "error" in d else f"N_hat={d['N_hat']:.1f} ci95=({d['ci95'][0]:.1f}, {d['ci95'][1]:.1f})"))
    if failed == len(fams):
        return EXIT_RUNTIME
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_risk_study(cfg, args) -> int:
    rc = cfg.risk
    R = FULL_R if args.full and rc.R < FULL_R else rc.R
    try:
        F = rc.fspec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    reports = risk_study(cfg.seed, F, rc.N, rc.alphas, R, rc.estimators, h=rc.h, design=rc.design)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "risk.csv").write_text(reports_to_csv(reports))
    (args.out / "risk.json").write_text(reports_to_json(reports))
    for rep in reports:
        s = rep.summary()
        print(f"{s['estimator']:9s} alpha={s['alpha']:<5g} target={s['target']:7s} Delta={s['delta_rmse']:.2f} failed={s['failed']}")
    return EXIT_PARTIAL if any(r.n_failed for r in reports) else EXIT_OK


def cmd_bound(cfg, args) -> int:
    if args.alpha is not None:
        res = {"alpha": args.alpha, "eps": args.eps, "N": args.N, "bound": thm1_bound(args.alpha, args.eps, args.N)}
    else:
        res = {"target": args.target, "eps": args.eps, "N": args.N, "alpha": alpha_for_target(args.target, args.eps, args.N)}
    print(json.dumps(res, sort_keys=True))
    return EXIT_OK


def cmd_study(cfg, args) -> int:
    summary, records = run_study(cfg, args.out, args.workers)
    print(Path(args.out / "coverage.csv").read_text(), end="")
    print(Path(args.out / "alphas.csv").read_text(), end="")
    if summary.n_failed_replicates:
        print(f"{summary.n_failed_replicates} replicate(s) had a failed fit", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    for p in render_report(args.study_dir):
        print(p)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-dp": cmd_fit_dp,
    "fit-loglinear": cmd_fit_loglinear,
    "risk-study": cmd_risk_study,
    "bound": cmd_bound,
    "study": cmd_study,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, UnattainableTarget) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if not isinstance(exc, CaptureDataError) else EXIT_RUNTIME
    except (MissingStudyArtifacts, OSError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
