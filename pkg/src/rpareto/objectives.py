"""Fit criteria for r-Pareto exceedances of a Brown-Resnick model.

All criteria are sums of per-event terms. :class:`Objective` wraps them in a
common *maximisation* orientation used by :mod:`rpareto.fit`:

* ``spectral``: sum of ``log lambda(x)``; the normaliser is constant in the
  parameters for the sum risk and is dropped.
* ``censored``: sum of censored log-densities, with quasi-Monte Carlo MVN
  estimates that reuse the same random shifts at every parameter value.
* ``gradscore:w1`` / ``gradscore:w2``: the weighted gradient score is a
  divergence to be minimised, so the objective is its negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brown_resnick import (
    QmcConfig,
    censored_orderings,
    censored_terms,
    exponent_measure_from_gamma,
    exponent_measure_orderings,
    log_intensity,
    precompute,
    score_components,
)
from .risk import NotDifferentiableError, RiskFunctional, eval_risk, exceeds, risk_gradient
from .variogram import VariogramParams, duplicate_pairs, gamma_matrix

OBJECTIVE_IDS = ("spectral", "censored", "gradscore:w1", "gradscore:w2")


@dataclass
class ExceedanceSet:
    events: np.ndarray  # (N_u, I), strictly positive
    u: np.ndarray  # (I,)
    risk: RiskFunctional
    n_total: int
    indices: np.ndarray | None = None  # row indices in the original data

    def __post_init__(self):
        self.events = np.atleast_2d(np.asarray(self.events, dtype=float))
        self.u = np.broadcast_to(np.asarray(self.u, dtype=float), (self.events.shape[1],)).copy()
        if np.any(~(self.u > 0)):
            raise ValueError("thresholds must be strictly positive")
        if self.events.shape[0] and not np.all(exceeds(self.risk, self.events, self.u)):
            raise ValueError("every event must satisfy r(x / u) > 1")

    @property
    def n_events(self) -> int:
        return self.events.shape[0]

    def subset(self, rows) -> "ExceedanceSet":
        rows = np.asarray(rows)
        idx = None if self.indices is None else self.indices[rows]
        return ExceedanceSet(self.events[rows], self.u, self.risk, self.n_total, idx)


@dataclass(frozen=True)
class WeightFunction:
    kind: str = "w1"
    boundary_corrected: bool = True

    def __post_init__(self):
        if self.kind not in ("w1", "w2"):
            raise ValueError(f"unknown weight function {self.kind!r}")


def _radial_factor(w: WeightFunction, rx: np.ndarray):
    """Shared factor ``W`` and ``dW/dr`` as functions of ``r(x / u)``."""
    arg = rx - 1.0 if w.boundary_corrected else rx + 1.0
    e = np.exp(-arg)
    return 1.0 - e, e


def component_thresholds(risk: RiskFunctional, u) -> np.ndarray:
    """Per-site levels ``u / r(1)``: a constant field at this level lies on the boundary."""
    u = np.asarray(u, dtype=float)
    return u / eval_risk(risk, np.ones_like(u))


def eval_weights(w: WeightFunction, risk: RiskFunctional, x, u):
    """Weights ``w_i(x)`` and their partials ``dw_i/dx_i``; batches along axis 0."""
    if not risk.differentiable:
        raise NotDifferentiableError(f"gradient score needs a differentiable risk, got {risk}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    rx = np.asarray(eval_risk(risk, x / u))[..., None]
    dr = risk_gradient(risk, x / u) / u  # d r(x/u) / d x_i
    W, dW_dr = _radial_factor(w, rx)
    dW = dW_dr * dr
    if w.kind == "w1":
        values = x * W
        partials = W + x * dW
    else:
        uc = component_thresholds(risk, u)
        e = np.exp(-3.0 * (x - uc) / uc)
        a = 1.0 - e
        values = a * W
        partials = (3.0 / uc) * e * W + a * dW
    return values, partials


# ------------------------------------------------------------ criteria


def _check_events(exc: ExceedanceSet) -> None:
    bad = np.nonzero(np.any(~(exc.events > 0), axis=1))[0]
    if bad.size:
        raise ValueError(f"event {int(bad[0])} has a zero or negative component")


def spectral_terms(G: np.ndarray, exc: ExceedanceSet) -> np.ndarray:
    pre = precompute(None, gamma_mat=G)
    return log_intensity(pre, exc.events)


def spectral_loglik(params: VariogramParams, sites, exc: ExceedanceSet) -> float:
    """Spectral log-likelihood (sum risk only), up to a parameter-free constant."""
    if exc.risk.kind != "sum":
        raise ValueError("the spectral likelihood drops the normaliser, which is only valid for the sum risk")
    _check_events(exc)
    return float(np.sum(spectral_terms(gamma_matrix(params, sites), exc)))


@dataclass(frozen=True)
class CensoredOrdering:
    """MVN variable orderings frozen at a reference parameter.

    Together with fixed QMC shifts this makes the censored objective a
    continuous function of the parameters.
    """

    events: dict
    exponent: np.ndarray | None


def censored_ordering(G: np.ndarray, exc: ExceedanceSet) -> CensoredOrdering:
    return CensoredOrdering(
        censored_orderings(G, exc.events, exc.u, event_ids=_event_ids(exc)),
        exponent_measure_orderings(G, exc.u),
    )


def censored_event_terms(
    G: np.ndarray, exc: ExceedanceSet, qmc: QmcConfig, ordering: CensoredOrdering | None = None
) -> np.ndarray:
    ev_orders = None if ordering is None else ordering.events
    lam_orders = None if ordering is None else ordering.exponent
    vals, _ = censored_terms(G, exc.events, exc.u, qmc, event_ids=_event_ids(exc), orders=ev_orders)
    lam_u, _ = exponent_measure_from_gamma(G, exc.u, qmc, tag=2, orders=lam_orders)
    return vals - math.log(lam_u)


def _event_ids(exc: ExceedanceSet):
    if exc.indices is not None:
        return [int(i) for i in exc.indices]
    return list(range(exc.n_events))


def censored_objective(params: VariogramParams, sites, exc: ExceedanceSet, qmc: QmcConfig = QmcConfig()) -> float:
    """Censored log-likelihood on ``A_max(u)`` with per-event fixed QMC shifts."""
    _check_events(exc)
    return float(np.sum(censored_event_terms(gamma_matrix(params, sites), exc, qmc)))


def gradient_score_terms(G: np.ndarray, exc: ExceedanceSet, w: WeightFunction) -> np.ndarray:
    pre = precompute(None, gamma_mat=G)
    grad, hess = score_components(pre, exc.events)
    wv, dw = eval_weights(w, exc.risk, exc.events, exc.u)
    return np.sum(2.0 * wv * dw * grad + wv * wv * (hess + 0.5 * grad * grad), axis=1)


def gradient_score(params: VariogramParams, sites, exc: ExceedanceSet, w: WeightFunction = WeightFunction()) -> float:
    """Weighted gradient score summed over events (smaller is better)."""
    if not exc.risk.differentiable:
        raise NotDifferentiableError(f"gradient score needs a differentiable risk, got {exc.risk}")
    _check_events(exc)
    return float(np.sum(gradient_score_terms(gamma_matrix(params, sites), exc, w)))


# ------------------------------------------------------- objective wrapper


@dataclass
class Objective:
    """A fit criterion bound to sites and data, oriented for maximisation."""

    kind: str
    sites: object
    exc: ExceedanceSet
    qmc: QmcConfig = field(default_factory=QmcConfig)
    weight: WeightFunction | None = None
    ordering: CensoredOrdering | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_IDS:
            raise ValueError(f"unknown objective {self.kind!r}; choose from {OBJECTIVE_IDS}")
        _check_events(self.exc)
        if self.kind == "spectral" and self.exc.risk.kind != "sum":
            raise ValueError("spectral objective requires the sum risk")
        if self.kind.startswith("gradscore"):
            if not self.exc.risk.differentiable:
                raise NotDifferentiableError(f"gradient score needs a differentiable risk, got {self.exc.risk}")
            if self.weight is None:
                self.weight = WeightFunction(self.kind.split(":")[1])
        dups = duplicate_pairs(self.sites)
        if dups:
            raise ValueError(f"duplicated sites {dups[0]} make the model singular")

    def per_event(self, params: VariogramParams) -> np.ndarray:
        G = gamma_matrix(params, self.sites)
        if self.kind == "spectral":
            return spectral_terms(G, self.exc)
        if self.kind == "censored":
            return censored_event_terms(G, self.exc, self.qmc, self.ordering)
        return -gradient_score_terms(G, self.exc, self.weight)

    def __call__(self, params: VariogramParams) -> float:
        return float(np.sum(self.per_event(params)))

    def subset(self, rows) -> "Objective":
        return Objective(self.kind, self.sites, self.exc.subset(rows), self.qmc, self.weight, self.ordering)

    def with_seed(self, seed: int) -> "Objective":
        qmc = QmcConfig(self.qmc.p, self.qmc.p_prime, seed)
        return Objective(self.kind, self.sites, self.exc, qmc, self.weight, self.ordering)

    def with_ordering(self, params: VariogramParams) -> "Objective":
        """Copy whose censored MVN orderings are frozen at ``params`` (no-op otherwise)."""
        if self.kind != "censored":
            return self
        ordering = censored_ordering(gamma_matrix(params, self.sites), self.exc)
        return Objective(self.kind, self.sites, self.exc, self.qmc, self.weight, ordering)


def build_objective(objective_id: str, sites, exc: ExceedanceSet, qmc: QmcConfig | None = None, boundary_corrected: bool = True) -> Objective:
    weight = None
    if objective_id.startswith("gradscore:"):
        weight = WeightFunction(objective_id.split(":", 1)[1], boundary_corrected)
    return Objective(objective_id, sites, exc, qmc or QmcConfig(), weight)
