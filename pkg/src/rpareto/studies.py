"""Replicate simulation studies comparing the three estimators.

Each replicate simulates ``N`` fields on a regular grid, selects the top
``1 - q`` fraction of events and fits the spectral likelihood (sum risk),
the weighted gradient score (sum risk) and the censored likelihood (events
above a common threshold at any site). All fits share one fixed start.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .brown_resnick import QmcConfig
from .fit import NonConvergenceError, optimize, parallel_map, select_exceedances
from .objectives import build_objective
from .risk import RiskFunctional
from .simulate import SimulationConfig, simulate_maxstable_approx, simulate_pareto
from .variogram import VariogramParams, regular_grid

ESTIMATORS = ("spectral", "gradscore:w1", "censored")
_RISK_FOR = {"spectral": "sum", "gradscore:w1": "sum", "gradscore:w2": "sum", "censored": "max"}


@dataclass(frozen=True)
class StudyConfig:
    model: str = "pareto"  # or "maxstable"
    truth: VariogramParams = VariogramParams(1.0, 2.5)
    nx: int = 10
    ny: int = 10
    extent: float = 100.0
    n_samples: int = 10_000
    quantile: float = 0.99
    start: VariogramParams = VariogramParams(0.7, 4.0)
    qmc: QmcConfig = QmcConfig(499, 2, 0)
    estimators: tuple[str, ...] = ESTIMATORS


def frechet_to_pareto(m: np.ndarray) -> np.ndarray:
    """Exact probability transform from unit Frechet to unit Pareto margins."""
    return -1.0 / np.expm1(-1.0 / np.asarray(m, dtype=float))


def simulate_study_data(cfg: StudyConfig, seed: int) -> np.ndarray:
    sites = regular_grid(cfg.nx, cfg.ny, cfg.extent)
    sim = SimulationConfig(cfg.n_samples, seed, cfg.truth, sites)
    if cfg.model == "pareto":
        return simulate_pareto(sim)
    if cfg.model == "maxstable":
        return frechet_to_pareto(simulate_maxstable_approx(sim))
    raise ValueError(f"unknown study model {cfg.model!r}")


def fit_replicate(seed: int, cfg: StudyConfig) -> dict:
    """Estimates ``{estimator: (kappa, tau) or None}`` and timings for one replicate."""
    sites = regular_grid(cfg.nx, cfg.ny, cfg.extent)
    data = simulate_study_data(cfg, seed)
    out = {"seed": seed, "estimates": {}, "seconds": {}}
    for est in cfg.estimators:
        exc = select_exceedances(data, RiskFunctional(_RISK_FOR[est]), cfg.quantile)
        qmc = QmcConfig(cfg.qmc.p, cfg.qmc.p_prime, cfg.qmc.seed + seed)
        obj = build_objective(est, sites, exc, qmc)
        t0 = time.perf_counter()
        try:
            fit = optimize(obj, [cfg.start])
            out["estimates"][est] = (fit.theta_hat.kappa, fit.theta_hat.tau)
        except NonConvergenceError:
            out["estimates"][est] = None
        out["seconds"][est] = time.perf_counter() - t0
    return out


@dataclass
class StudySummary:
    truth: VariogramParams
    replicates: list[dict] = field(default_factory=list)

    def estimates(self, est: str) -> np.ndarray:
        vals = [r["estimates"][est] for r in self.replicates if r["estimates"].get(est) is not None]
        return np.array(vals, dtype=float).reshape(-1, 2)

    def n_failed(self, est: str) -> int:
        return sum(r["estimates"].get(est) is None for r in self.replicates)

    def bias(self, est: str) -> np.ndarray:
        return self.estimates(est).mean(axis=0) - [self.truth.kappa, self.truth.tau]

    def rmse(self, est: str) -> np.ndarray:
        err = self.estimates(est) - [self.truth.kappa, self.truth.tau]
        return np.sqrt(np.mean(err**2, axis=0))

    def mean_seconds(self, est: str) -> float:
        return float(np.mean([r["seconds"][est] for r in self.replicates]))

    def table(self) -> str:
        lines = [f"{'estimator':<14}{'bias kappa':>12}{'rmse kappa':>12}{'bias tau':>10}{'rmse tau':>10}{'fail':>6}{'sec':>8}"]
        for est in self.replicates[0]["estimates"]:
            b, r = self.bias(est), self.rmse(est)
            lines.append(
                f"{est:<14}{b[0]:>12.4f}{r[0]:>12.4f}{b[1]:>10.3f}{r[1]:>10.3f}"
                f"{self.n_failed(est):>6d}{self.mean_seconds(est):>8.1f}"
            )
        return "\n".join(lines)


def run_study(cfg: StudyConfig, n_rep: int, base_seed: int = 0, n_jobs: int = 1) -> StudySummary:
    seeds = [base_seed + k for k in range(n_rep)]
    reps = parallel_map(partial(fit_replicate, cfg=cfg), seeds, n_jobs)
    return StudySummary(cfg.truth, reps)


def relative_efficiency(summary: StudySummary, est: str, reference: str = "spectral") -> float:
    """``100 * RMSE(reference) / RMSE(est)`` for ``kappa``."""
    r = summary.rmse(est)[0]
    return math.inf if r == 0 else 100.0 * summary.rmse(reference)[0] / r
