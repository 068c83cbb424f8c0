"""Data preparation, threshold selection, optimisation and standard errors."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

from .objectives import ExceedanceSet, Objective
from .risk import RiskFunctional, eval_risk
from .variogram import PARAM_NAMES, VariogramParams, coordinates

log = logging.getLogger(__name__)

DEFAULT_FREE = ("kappa", "tau")
CENSORED_FATOL = 1e-3
DEFAULT_FATOL = 1e-6
CENSORED_XATOL = 1e-3
DEFAULT_XATOL = 1e-4
SIMPLEX_STEP = 0.3


class NonConvergenceError(RuntimeError):
    """Every optimisation start failed; ``outcomes`` holds per-start diagnostics."""

    def __init__(self, message: str, outcomes=()):
        super().__init__(message)
        self.outcomes = list(outcomes)


class EmptyExceedanceError(ValueError):
    """Too few events above the selected threshold."""


# ------------------------------------------------------------------ margins


def transform_margins(data, site_ids: Sequence[str] | None = None) -> np.ndarray:
    """Column-wise empirical transform to the unit Pareto scale.

    ``x* = 1 / (1 - rank / (N + 1))`` with average ranks for ties.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("data must be an (N, I) matrix with N >= 2")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contain missing or non-finite values")
    const = np.nonzero(np.ptp(data, axis=0) == 0)[0]
    if const.size:
        j = int(const[0])
        name = site_ids[j] if site_ids is not None else str(j)
        raise ValueError(f"column for site {name!r} is constant; its margin cannot be transformed")
    n = data.shape[0]
    ranks = rankdata(data, method="average", axis=0)
    return 1.0 / (1.0 - ranks / (n + 1.0))


@dataclass(frozen=True)
class GpdFit:
    xi: float
    sigma: float
    threshold: float
    zeta_u: float
    n_exceed: int


def _gpd_nll(params, y):
    xi, log_sigma = params
    sigma = math.exp(log_sigma)
    n = y.size
    if abs(xi) < 1e-6:
        return n * log_sigma + float(np.sum(y)) / sigma
    t = 1.0 + xi * y / sigma
    if np.any(t <= 0):
        return math.inf
    return n * log_sigma + (1.0 + 1.0 / xi) * float(np.sum(np.log(t)))


def fit_gpd(values, u: float, min_exceed: int = 30) -> GpdFit:
    """Maximum-likelihood generalised Pareto fit to the excesses over ``u``.

    Near ``xi = 0`` the exponential limit of the likelihood is used.
    """
    values = np.asarray(values, dtype=float).ravel()
    y = values[values > u] - u
    if y.size < min_exceed:
        raise ValueError(f"only {y.size} exceedances above {u:g}; at least {min_exceed} required")
    m, v = float(np.mean(y)), float(np.var(y))
    xi0 = 0.5 * (1.0 - m * m / v) if v > 0 else 0.0
    xi0 = float(np.clip(xi0, -0.4, 0.9))
    sigma0 = max(m * (1.0 - xi0), 1e-8 * max(m, 1e-300))
    best = None
    for start in ((xi0, math.log(sigma0)), (0.1, math.log(m))):
        res = minimize(_gpd_nll, start, args=(y,), method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise NonConvergenceError("generalised Pareto fit did not converge")
    xi, log_sigma = best.x
    return GpdFit(float(xi), float(math.exp(log_sigma)), float(u), y.size / values.size, int(y.size))


def threshold_stability(values, quantiles: Sequence[float], min_exceed: int = 30) -> list[GpdFit]:
    """GPD fits over increasing empirical quantile thresholds (skipping thin ones)."""
    values = np.asarray(values, dtype=float).ravel()
    fits = []
    for q in quantiles:
        u = float(np.quantile(values, q, method="inverted_cdf"))
        try:
            fits.append(fit_gpd(values, u, min_exceed))
        except ValueError:
            continue
    return fits


def local_shape_mean(data, q: float, min_exceed: int = 30) -> float:
    """Mean of per-site GPD shape estimates at the ``q`` quantile."""
    data = np.asarray(data, dtype=float)
    xis = [fit_gpd(col, float(np.quantile(col, q, method="inverted_cdf")), min_exceed).xi for col in data.T]
    return float(np.mean(xis))


def select_exceedances(data, risk: RiskFunctional, q: float, min_events: int = 2) -> ExceedanceSet:
    """Rows of ``data`` whose risk exceeds its empirical ``q`` quantile.

    The scalar threshold is broadcast to a constant vector ``u``, so that
    ``r(x / u) > 1`` is the same as ``r(x) > u`` for homogeneous ``r``.
    ``q = 0`` selects every row.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError("quantile must lie in [0, 1)")
    data = np.asarray(data, dtype=float)
    r = np.asarray(eval_risk(risk, data))
    if q == 0.0:
        u_s = 0.5 * float(np.min(r))
    else:
        u_s = float(np.quantile(r, q, method="inverted_cdf"))
    if not u_s > 0:
        raise ValueError("risk threshold must be strictly positive")
    rows = np.nonzero(r > u_s)[0]
    if rows.size < min_events:
        raise EmptyExceedanceError(f"only {rows.size} events exceed the {q:g} risk quantile")
    u = np.full(data.shape[1], u_s)
    return ExceedanceSet(data[rows], u, risk, data.shape[0], rows)


# ------------------------------------------------------------- transforms


def _sigmoid(z):
    return 0.5 * (1.0 + math.tanh(0.5 * z))


def _logit(p):
    return math.log(p / (1.0 - p))


_TO_FREE = {
    "kappa": lambda v: _logit(min(max(v / 2.0, 1e-9), 1.0 - 1e-9)),
    "tau": math.log,
    "eta": lambda v: math.atanh(min(max(2.0 * v / math.pi, -1.0 + 1e-9), 1.0 - 1e-9)),
    "a": lambda v: math.log(max(v - 1.0, 1e-9)),
}
_FROM_FREE = {
    "kappa": lambda z: 2.0 * _sigmoid(z),
    "tau": math.exp,
    "eta": lambda z: 0.5 * math.pi * math.tanh(z),
    "a": lambda z: 1.0 + math.exp(z),
}


def to_unconstrained(params: VariogramParams, free: Sequence[str]) -> np.ndarray:
    return np.array([_TO_FREE[n](getattr(params, n)) for n in free])


def from_unconstrained(z, base: VariogramParams, free: Sequence[str]) -> VariogramParams:
    vals = {}
    for n, zi in zip(free, z):
        v = _FROM_FREE[n](float(np.clip(zi, -700.0, 700.0)))
        if n == "kappa":
            v = min(max(v, 1e-12), 2.0)
        elif n == "tau":
            v = max(v, 1e-300)
        elif n == "eta":
            v = min(max(v, -0.5 * math.pi + 1e-12), 0.5 * math.pi)
        vals[n] = v
    return base.with_values(**vals)


# ----------------------------------------------------------- optimisation


@dataclass
class StartOutcome:
    start: VariogramParams
    theta: VariogramParams | None
    value: float
    converged: bool
    n_evaluations: int
    message: str

    def as_dict(self) -> dict:
        return {
            "start": self.start.as_dict(),
            "theta": None if self.theta is None else self.theta.as_dict(),
            "value": self.value if math.isfinite(self.value) else None,
            "converged": self.converged,
            "n_evaluations": self.n_evaluations,
            "message": self.message,
        }


@dataclass
class FitResult:
    theta_hat: VariogramParams
    objective_value: float
    converged: bool
    n_events: int
    free: tuple[str, ...]
    se: dict[str, float] | None = None
    godambe: np.ndarray | None = None
    starts: list[StartOutcome] = field(default_factory=list)
    replicates: list[VariogramParams] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "theta_hat": {k: getattr(self.theta_hat, k) for k in PARAM_NAMES},
            "objective_value": self.objective_value,
            "converged": self.converged,
            "n_events": self.n_events,
            "free": list(self.free),
            "se": self.se,
            "godambe": None if self.godambe is None else np.asarray(self.godambe).tolist(),
            "starts": [s.as_dict() for s in self.starts],
        }


def default_tolerances(obj: Objective) -> tuple[float, float]:
    """``(fatol, xatol)``; looser for the censored criterion to avoid chasing QMC noise."""
    if obj.kind == "censored":
        return CENSORED_FATOL, CENSORED_XATOL
    return DEFAULT_FATOL, DEFAULT_XATOL


def _check_free(free: Sequence[str]) -> tuple[str, ...]:
    free = tuple(free)
    unknown = set(free) - set(PARAM_NAMES)
    if unknown or not free:
        raise ValueError(f"free parameters must be a non-empty subset of {PARAM_NAMES}")
    return free


def parallel_map(fn, items, n_jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally over a process pool; order is preserved."""
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(n_jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _single_start(start: VariogramParams, obj: Objective, free, fatol, xatol, maxiter) -> StartOutcome:
    z0 = to_unconstrained(start, free)

    def negobj(z):
        try:
            val = obj(from_unconstrained(z, start, free))
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return math.inf
        return -val if math.isfinite(val) else math.inf

    simplex = np.vstack([z0] + [z0 + SIMPLEX_STEP * e for e in np.eye(len(free))])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            negobj, z0, method="Nelder-Mead",
            options={"initial_simplex": simplex, "fatol": fatol, "xatol": xatol, "maxiter": maxiter},
        )
    ok = bool(res.success) and math.isfinite(res.fun)
    theta = from_unconstrained(res.x, start, free) if math.isfinite(res.fun) else None
    return StartOutcome(start, theta, -float(res.fun), ok, int(res.nfev), str(res.message))


def optimize(
    obj: Objective,
    starts: Sequence[VariogramParams],
    free: Sequence[str] = DEFAULT_FREE,
    fatol: float | None = None,
    xatol: float | None = None,
    maxiter: int | None = None,
    n_jobs: int = 1,
) -> FitResult:
    """Maximise ``obj`` by Nelder-Mead from each start and keep the best.

    Parameters are mapped to an unconstrained space (logistic for ``kappa``
    and ``eta``, log for ``tau``, shifted log for ``a``); fixed parameters
    are taken from each start. A censored objective without frozen MVN
    orderings gets them frozen at the first start. Ties between starts go
    to the earliest one.
    """
    if not starts:
        raise ValueError("at least one start is required")
    free = _check_free(free)
    if obj.kind == "censored" and obj.ordering is None:
        obj = obj.with_ordering(starts[0])
    d_fatol, d_xatol = default_tolerances(obj)
    fatol = d_fatol if fatol is None else fatol
    xatol = d_xatol if xatol is None else xatol
    maxiter = maxiter or 200 * len(free)
    task = partial(_single_start, obj=obj, free=free, fatol=fatol, xatol=xatol, maxiter=maxiter)
    outcomes = parallel_map(task, starts, n_jobs)
    good = [o for o in outcomes if o.converged]
    if not good:
        raise NonConvergenceError("all optimisation starts failed", outcomes)
    best = max(good, key=lambda o: o.value)
    return FitResult(best.theta, best.value, True, obj.exc.n_events, free, starts=outcomes)


def _replicate_fit(seed: int, obj: Objective, starts, free, kw):
    try:
        return optimize(obj.with_seed(int(seed)), starts, free, **kw)
    except NonConvergenceError as err:
        return err


def averaged_censored_fit(
    obj: Objective,
    p_bar: int,
    starts: Sequence[VariogramParams],
    free: Sequence[str] = DEFAULT_FREE,
    seeds: Sequence[int] | None = None,
    n_jobs: int = 1,
    **kw,
) -> FitResult:
    """Average ``p_bar`` maximisations that use independent QMC seeds.

    ``se`` holds the standard error of the mean across replicates, which is
    the quasi-Monte Carlo part of the uncertainty. Non-convergent replicates
    are dropped with a warning.
    """
    if p_bar < 2:
        raise ValueError("p_bar must be >= 2")
    free = _check_free(free)
    if seeds is None:
        seeds = [obj.qmc.seed + k for k in range(p_bar)]
    if len(seeds) != p_bar:
        raise ValueError("need one seed per replicate")
    task = partial(_replicate_fit, obj=obj, starts=list(starts), free=free, kw=kw)
    fits, outcomes = [], []
    for k, (s, res) in enumerate(zip(seeds, parallel_map(task, seeds, n_jobs))):
        if isinstance(res, NonConvergenceError):
            log.warning("replicate %d (seed %d) did not converge; excluded", k, s)
            outcomes.extend(res.outcomes)
            continue
        fits.append(res)
        outcomes.extend(res.starts)
    if not fits:
        raise NonConvergenceError("every averaged-fit replicate failed", outcomes)
    values = np.array([[getattr(f.theta_hat, n) for n in free] for f in fits])
    mean = values.mean(axis=0)
    if len(fits) > 1:
        spread = values.std(axis=0, ddof=1) / math.sqrt(len(fits))
    else:
        spread = np.full(len(free), np.nan)
    theta = fits[0].theta_hat.with_values(**dict(zip(free, mean)))
    return FitResult(
        theta,
        float(np.mean([f.objective_value for f in fits])),
        True,
        obj.exc.n_events,
        free,
        se=dict(zip(free, map(float, spread))),
        starts=outcomes,
        replicates=[f.theta_hat for f in fits],
    )


# ------------------------------------------------------ standard errors


@dataclass
class JackknifeResult:
    se: dict[str, float]
    estimates: np.ndarray  # (n_ok, n_free)
    failed_blocks: list[int]


def _block_refit(keep, obj: Objective, theta_hat, free, kw):
    try:
        return optimize(obj.subset(keep), [theta_hat], free, **kw)
    except NonConvergenceError as err:
        return err


def jackknife_se(
    obj: Objective,
    theta_hat: VariogramParams,
    n_blocks: int = 20,
    free: Sequence[str] = DEFAULT_FREE,
    n_jobs: int = 1,
    **kw,
) -> JackknifeResult:
    """Delete-one-block jackknife over contiguous blocks of events.

    Each refit starts from ``theta_hat``. Blocks whose refit fails are listed
    in ``failed_blocks`` and left out of the variance.
    """
    free = _check_free(free)
    n = obj.exc.n_events
    if not 2 <= n_blocks <= n:
        raise ValueError(f"n_blocks must lie in [2, {n}]")
    if obj.kind == "censored" and obj.ordering is None:
        obj = obj.with_ordering(theta_hat)
    blocks = np.array_split(np.arange(n), n_blocks)
    keeps = [np.setdiff1d(np.arange(n), block) for block in blocks]
    task = partial(_block_refit, obj=obj, theta_hat=theta_hat, free=free, kw=kw)
    estimates, failed = [], []
    for b, res in enumerate(parallel_map(task, keeps, n_jobs)):
        if isinstance(res, NonConvergenceError):
            log.warning("jackknife block %d refit failed", b)
            failed.append(b)
            continue
        estimates.append([getattr(res.theta_hat, p) for p in free])
    est = np.array(estimates, dtype=float).reshape(-1, len(free))
    B = est.shape[0]
    if B < 2:
        raise NonConvergenceError("fewer than two jackknife refits succeeded")
    var = (B - 1) / B * np.sum((est - est.mean(axis=0)) ** 2, axis=0)
    return JackknifeResult(dict(zip(free, map(float, np.sqrt(var)))), est, failed)


@dataclass
class GodambeResult:
    J: np.ndarray
    K: np.ndarray
    G: np.ndarray
    se: dict[str, float]


def _steps(theta: VariogramParams, free, rel_step):
    return np.array([rel_step * max(abs(getattr(theta, n)), 1.0) for n in free])


def godambe(
    obj: Objective,
    theta_hat: VariogramParams,
    free: Sequence[str] = DEFAULT_FREE,
    rel_step: float = 1e-4,
) -> GodambeResult:
    """Sensitivity ``K``, variability ``J`` and Godambe matrix ``K J^-1 K``.

    ``J`` is the mean outer product of per-event gradients and ``K`` the mean
    per-event Hessian, both by central differences in the natural
    parameters. Standard errors are ``sqrt(diag(G^-1) / N_u)``.
    """
    free = _check_free(free)
    if obj.kind == "censored" and obj.ordering is None:
        obj = obj.with_ordering(theta_hat)
    k = len(free)
    h = _steps(theta_hat, free, rel_step)
    base = np.array([getattr(theta_hat, n) for n in free])

    def at(delta):
        return obj.per_event(theta_hat.with_values(**dict(zip(free, base + delta))))

    f0 = at(np.zeros(k))
    n = f0.size
    plus = [at(h[i] * np.eye(k)[i]) for i in range(k)]
    minus = [at(-h[i] * np.eye(k)[i]) for i in range(k)]
    grads = np.stack([(plus[i] - minus[i]) / (2.0 * h[i]) for i in range(k)], axis=1)
    J = grads.T @ grads / n
    K = np.empty((k, k))
    for i in range(k):
        K[i, i] = np.mean(plus[i] - 2.0 * f0 + minus[i]) / h[i] ** 2
        for j in range(i + 1, k):
            ei, ej = h[i] * np.eye(k)[i], h[j] * np.eye(k)[j]
            val = np.mean(at(ei + ej) - at(ei - ej) - at(ej - ei) + at(-ei - ej)) / (4.0 * h[i] * h[j])
            K[i, j] = K[j, i] = val
    eig = np.linalg.eigvalsh(K)
    if np.min(np.abs(eig)) <= 1e-12 * max(np.max(np.abs(eig)), 1e-300):
        raise np.linalg.LinAlgError(f"sensitivity matrix K is singular; eigenvalues {eig.tolist()}")
    Kinv = np.linalg.inv(K)
    Ginv = Kinv @ J @ Kinv.T
    G = np.linalg.inv(Ginv)
    se = np.sqrt(np.maximum(np.diag(Ginv), 0.0) / n)
    return GodambeResult(J, K, G, dict(zip(free, map(float, se))))


def score_ratio_statistic(obj: Objective, theta0: VariogramParams, theta_hat: VariogramParams) -> float:
    """``2 (objective(theta_hat) - objective(theta0))``; calibration is left to the caller."""
    return 2.0 * (obj(theta_hat) - obj(theta0))


def default_starts(sites, k: int, seed: int, free: Sequence[str] = DEFAULT_FREE, half_factor: bool = True):
    """``k`` starting points: a fixed central one, then seeded random draws.

    The central start has ``kappa = 1`` and ``tau`` equal to the smallest
    inter-site distance; random starts draw ``kappa`` uniformly on
    ``[0.3, 1.7]`` and ``log tau`` uniformly between a quarter of the
    smallest and the largest distance.
    """
    if k < 1:
        raise ValueError("need at least one start")
    xy = coordinates(sites)
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    d = d[d > 0]
    dmin, dmax = float(d.min()), float(d.max())
    starts = [VariogramParams(1.0, dmin, half_factor=half_factor)]
    rng = np.random.default_rng([seed, 7])
    for _ in range(k - 1):
        vals = {"kappa": rng.uniform(0.3, 1.7), "tau": math.exp(rng.uniform(math.log(dmin / 4), math.log(dmax)))}
        eta = rng.uniform(-1.0, 1.0) if "eta" in free else 0.0
        a = rng.uniform(1.0, 3.0) if "a" in free else 1.0
        starts.append(VariogramParams(vals["kappa"], vals["tau"], eta, a, half_factor))
    if "a" in free:
        starts[0] = starts[0].with_values(a=1.5)
    return starts
