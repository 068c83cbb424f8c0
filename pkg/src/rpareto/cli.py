"""Command-line interface: ``rpareto {simulate,fit,diagnose,mvnprob}``.

Exit codes: 0 success, 2 invalid input, 3 non-convergence or an empty
exceedance set.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import __version__
from .brown_resnick import QmcConfig
from .diagnostics import diagnostic_table
from .fit import (
    EmptyExceedanceError,
    NonConvergenceError,
    averaged_censored_fit,
    default_starts,
    godambe,
    jackknife_se,
    optimize,
    select_exceedances,
    transform_margins,
)
from .io import read_data, read_json, read_locations, read_matrix, write_json, write_samples
from .mvn import mvn_cdf
from .objectives import OBJECTIVE_IDS, build_objective
from .risk import parse_risk
from .simulate import SimulationConfig, simulate_maxstable_approx, simulate_pareto
from .variogram import PARAM_NAMES, VariogramParams

log = logging.getLogger("rpareto")

EXIT_INPUT = 2
EXIT_FIT = 3
CENSORED_SITE_WARNING = 500


class InputError(Exception):
    pass


def _params_from_args(args) -> VariogramParams:
    try:
        return VariogramParams(args.kappa, args.tau, args.eta, args.a, not args.no_half_factor)
    except ValueError as err:
        raise InputError(str(err)) from None


def cmd_simulate(args) -> int:
    params = _params_from_args(args)
    sites = read_locations(args.sites)
    if args.n < 1:
        raise InputError("--n must be >= 1")
    cfg = SimulationConfig(
        args.n, args.seed, params, sites, truncation=args.truncation,
        literal_mean=args.literal_mean, spectral=args.spectral,
    )
    if args.model == "pareto":
        samples, rejected = simulate_pareto(cfg, return_rejected=True)
    else:
        samples, rejected = simulate_maxstable_approx(cfg), 0
    meta = {
        "model": args.model,
        "n_samples": args.n,
        "seed": args.seed,
        "params": params.as_dict(),
        "half_factor": params.half_factor,
        "sites": args.sites,
        "truncation": args.truncation,
        "literal_mean": args.literal_mean,
        "spectral": args.spectral,
        "rejected": rejected,
        "version": __version__,
    }
    write_samples(args.out, samples, [s.id for s in sites], meta)
    return 0


def _parse_free(text: str) -> tuple[str, ...]:
    free = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in free if p not in PARAM_NAMES]
    if bad or not free:
        raise InputError(f"--free must list parameters from {PARAM_NAMES}")
    return free


def cmd_fit(args) -> int:
    if args.objective not in OBJECTIVE_IDS:
        raise InputError(f"--objective must be one of {OBJECTIVE_IDS}")
    if not 0.0 <= args.quantile < 1.0:
        raise InputError("--quantile must lie in [0, 1)")
    if args.starts < 1 or args.pbar < 1:
        raise InputError("--starts and --pbar must be >= 1")
    free = _parse_free(args.free)
    sites = read_locations(args.sites)
    ids = [s.id for s in sites]
    data = read_data(args.data, ids)
    risk = parse_risk(args.risk, ids)
    if args.objective == "censored" and len(sites) > CENSORED_SITE_WARNING:
        log.warning(
            "censored likelihood on %d sites: each evaluation needs hundreds of %d-dimensional "
            "normal probabilities; expect long run times", len(sites), len(sites) - 1,
        )
    t0 = time.perf_counter()
    xstar = transform_margins(data, ids)
    exc = select_exceedances(xstar, risk, args.quantile)
    qmc = QmcConfig(args.qmc_p, args.qmc_shifts, args.seed)
    obj = build_objective(args.objective, sites, exc, qmc, boundary_corrected=not args.literal_weights)
    starts = default_starts(sites, args.starts, args.seed, free, not args.no_half_factor)
    report = {
        "objective": args.objective,
        "risk": str(risk),
        "quantile": args.quantile,
        "n_events": exc.n_events,
        "n_total": exc.n_total,
        "threshold": float(exc.u[0]),
        "seed": args.seed,
        "free": list(free),
        "half_factor": not args.no_half_factor,
        "qmc": {"p": args.qmc_p, "p_prime": args.qmc_shifts, "p_bar": args.pbar},
        "theta_hat": None,
        "se": None,
        "se_method": None,
        "godambe": None,
        "converged": False,
    }
    try:
        if args.objective == "censored" and args.pbar > 1:
            fit = averaged_censored_fit(obj, args.pbar, starts, free, n_jobs=args.threads)
            report["se_qmc"] = fit.se
        else:
            fit = optimize(obj, starts, free, n_jobs=args.threads)
    except NonConvergenceError as err:
        report["starts"] = [o.as_dict() for o in err.outcomes]
        report["runtime_seconds"] = time.perf_counter() - t0
        write_json(args.out, report)
        print(f"rpareto: {err}", file=sys.stderr)
        return EXIT_FIT
    report.update(
        theta_hat=fit.theta_hat.as_dict(),
        objective_value=fit.objective_value,
        converged=fit.converged,
        starts=[o.as_dict() for o in fit.starts],
    )
    if args.godambe:
        g = godambe(obj, fit.theta_hat, free)
        report.update(godambe=g.G, se=g.se, se_method="godambe", J=g.J, K=g.K)
    if args.jackknife:
        jk = jackknife_se(obj, fit.theta_hat, args.jackknife, free, n_jobs=args.threads)
        report.update(se=jk.se, se_method="jackknife", jackknife_failed_blocks=jk.failed_blocks)
    report["runtime_seconds"] = time.perf_counter() - t0
    write_json(args.out, report)
    return 0


def cmd_diagnose(args) -> int:
    sites = read_locations(args.sites)
    ids = [s.id for s in sites]
    data = read_data(args.data, ids)
    rep = read_json(args.fit)
    if not rep.get("theta_hat"):
        raise InputError(f"{args.fit}: report has no parameter estimate")
    th = rep["theta_hat"]
    params = VariogramParams(th["kappa"], th["tau"], th["eta"], th["a"], rep.get("half_factor", True))
    risk = parse_risk(args.risk, ids)
    xstar = transform_margins(data, ids)
    exc = select_exceedances(xstar, risk, args.quantile)
    site_u = np.quantile(xstar, args.quantile, axis=0, method="inverted_cdf")
    table = diagnostic_table(xstar, sites, params, risk, exc.u, site_u, n_bins=args.bins)
    if table.distance.size == 0:
        raise EmptyExceedanceError("no pair has a conditioning exceedance")
    table.write_csv(args.out)
    return 0


def cmd_mvnprob(args) -> int:
    sigma = np.atleast_2d(read_matrix(args.sigma))
    upper = np.atleast_1d(read_matrix(args.upper)).ravel()
    if sigma.shape[0] != sigma.shape[1] or sigma.shape[0] != upper.size:
        raise InputError("sigma must be square with one row per upper limit")
    est = mvn_cdf(upper, sigma, p=args.p, p_prime=args.shifts, seed=args.seed)
    print(f"{est.value!r} {est.probable_error!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpareto", description="Brown-Resnick r-Pareto simulation and inference")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_params(p):
        p.add_argument("--kappa", type=float, required=True)
        p.add_argument("--tau", type=float, required=True)
        p.add_argument("--eta", type=float, default=0.0)
        p.add_argument("--a", type=float, default=1.0)

    def add_common(p):
        p.add_argument("--no-half-factor", action="store_true", help="use gamma = (|Omega h| / tau)^kappa")
        p.add_argument("--threads", type=int, default=1, help="worker processes for independent tasks")

    s = sub.add_parser("simulate", help="simulate Pareto or max-stable samples")
    s.add_argument("--model", choices=("pareto", "maxstable"), required=True)
    add_params(s)
    s.add_argument("--sites", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--truncation", type=float, default=1e-4, help="Poisson cutoff for --spectral drift")
    s.add_argument("--spectral", choices=("normalized", "drift"), default="normalized")
    s.add_argument("--literal-mean", action="store_true", help="zero-mean anchored Gaussian")
    add_common(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the dependence model to data")
    f.add_argument("--data", required=True)
    f.add_argument("--sites", required=True)
    f.add_argument("--objective", required=True)
    f.add_argument("--risk", default="sum")
    f.add_argument("--quantile", type=float, default=0.99)
    f.add_argument("--starts", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--qmc-p", type=int, default=499)
    f.add_argument("--qmc-shifts", type=int, default=3)
    f.add_argument("--pbar", type=int, default=1)
    f.add_argument("--jackknife", type=int, default=0, metavar="B")
    f.add_argument("--godambe", action="store_true")
    f.add_argument("--free", default="kappa,tau")
    f.add_argument("--literal-weights", action="store_true", help="radial weight factor 1 - exp(-r - 1)")
    f.add_argument("--out", required=True)
    add_common(f)
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("diagnose", help="conditional exceedance diagnostics")
    d.add_argument("--data", required=True)
    d.add_argument("--sites", required=True)
    d.add_argument("--fit", required=True)
    d.add_argument("--risk", default="sum")
    d.add_argument("--quantile", type=float, default=0.99)
    d.add_argument("--bins", type=int, default=20)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    m = sub.add_parser("mvnprob", help="multivariate normal probability")
    m.add_argument("--sigma", required=True)
    m.add_argument("--upper", required=True)
    m.add_argument("--p", type=int, default=499)
    m.add_argument("--shifts", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_mvnprob)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="rpareto: warning: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmptyExceedanceError as err:
        print(f"rpareto: {err}", file=sys.stderr)
        return EXIT_FIT
    except (InputError, ValueError, OSError, np.linalg.LinAlgError) as err:
        print(f"rpareto: error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
