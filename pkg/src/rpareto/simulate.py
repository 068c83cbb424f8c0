"""Simulation of Brown-Resnick r-Pareto processes and max-stable processes.

Pareto samples use a uniformly chosen anchor site ``i`` and the log-Gaussian
spectral function ``Q_j = exp(Z_j - Z_i - gamma(s_j, s_i))`` (so ``Q_i = 1``),
then ``P = U Q / ||Q||_1`` with ``U`` unit Pareto.

Max-stable samples are pointwise maxima of a Poisson process
``{U_k * I * Q_k / ||Q_k||_1}`` with ``U_k`` points of intensity ``u^-2 du``.
Since the normalised spectral functions are bounded by ``I``, generation
stops exactly once ``U_k * I`` drops below the current minimum. The literal
drift construction ``U_k exp(Z_k(s) - gamma(s_0, s))`` is also available;
it is truncated once ``U_k < eps * min M``.

Random numbers come from substreams keyed by ``(seed, block)`` with blocks of
:data:`BLOCK` consecutive samples, so output does not depend on how the work
is split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .brown_resnick import robust_cholesky
from .variogram import Location, VariogramParams, gamma_matrix

log = logging.getLogger(__name__)

BLOCK = 256
_TINY = np.finfo(float).tiny


@dataclass
class SimulationConfig:
    n_samples: int
    seed: int
    params: VariogramParams
    sites: list[Location] | np.ndarray
    truncation: float = 1e-4
    literal_mean: bool = False  # zero-mean anchored Gaussian (degenerate drift)
    spectral: str = "normalized"  # or "drift" for the max-stable simulator

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.truncation > 0:
            raise ValueError("truncation must be > 0")
        if self.spectral not in ("normalized", "drift"):
            raise ValueError("spectral must be 'normalized' or 'drift'")


@dataclass
class _Field:
    G: np.ndarray
    chol: np.ndarray
    I: int = field(init=False)

    def __post_init__(self):
        self.I = self.G.shape[0]


def _field(cfg: SimulationConfig) -> _Field:
    G = gamma_matrix(cfg.params, cfg.sites)
    # Covariance of Z(s) - Z(s_0) plus an independent constant; differences
    # against any anchor then have covariance gamma_ji + gamma_ki - gamma_jk.
    offset = float(np.mean(G[0, 1:])) or 1.0
    S = G[:, [0]] + G[[0], :] - G + offset
    return _Field(G, robust_cholesky(S, "simulation covariance"))


def anchored_log_spectral(rng: np.random.Generator, fld: _Field, n: int, literal_mean: bool = False):
    """Draw anchors and ``log Q`` with ``log Q[anchor] == 0``."""
    anchors = rng.integers(fld.I, size=n)
    Z = rng.standard_normal((n, fld.I)) @ fld.chol.T
    logQ = Z - Z[np.arange(n), anchors][:, None]
    if not literal_mean:
        logQ -= fld.G[anchors, :]
    logQ[np.arange(n), anchors] = 0.0
    return anchors, logQ


def _pareto_block(rng, fld: _Field, n: int, literal_mean: bool):
    out = np.empty((n, fld.I))
    todo = np.arange(n)
    rejected = 0
    while todo.size:
        _, logQ = anchored_log_spectral(rng, fld, todo.size, literal_mean)
        U = 1.0 / (1.0 - rng.random(todo.size))
        logP = np.log(U)[:, None] + logQ - logsumexp(logQ, axis=1, keepdims=True)
        with np.errstate(under="ignore"):
            P = np.exp(logP)
        ok = np.all(P >= _TINY, axis=1)
        out[todo[ok]] = P[ok]
        rejected += int(np.sum(~ok))
        todo = todo[~ok]
    return out, rejected


def simulate_pareto(cfg: SimulationConfig, *, return_rejected: bool = False):
    """Draw ``cfg.n_samples`` r-Pareto vectors with ``||P||_1`` unit Pareto.

    Samples with a component below the smallest normal double are redrawn;
    their count is returned when ``return_rejected`` is set.
    """
    fld = _field(cfg)
    blocks = []
    rejected = 0
    for b, start in enumerate(range(0, cfg.n_samples, BLOCK)):
        n = min(BLOCK, cfg.n_samples - start)
        rng = np.random.default_rng([cfg.seed, b])
        block, rej = _pareto_block(rng, fld, n, cfg.literal_mean)
        blocks.append(block)
        rejected += rej
    if rejected:
        log.warning("rejected %d Pareto samples with components below %g", rejected, _TINY)
    samples = np.vstack(blocks)
    return (samples, rejected) if return_rejected else samples


def _maxstable_block_normalized(rng, fld: _Field, n: int, literal_mean: bool) -> np.ndarray:
    I = fld.I
    M = np.zeros((n, I))
    arrivals = np.zeros(n)
    active = np.arange(n)
    while active.size:
        arrivals[active] += rng.standard_exponential(active.size)
        U = 1.0 / arrivals[active]
        stop = U * I <= M[active].min(axis=1)
        active = active[~stop]
        U = U[~stop]
        if not active.size:
            break
        _, logQ = anchored_log_spectral(rng, fld, active.size, literal_mean)
        theta = np.exp(logQ - logsumexp(logQ, axis=1, keepdims=True))
        M[active] = np.maximum(M[active], (U * I)[:, None] * theta)
    return M


def _maxstable_block_drift(rng, fld: _Field, n: int, eps: float) -> np.ndarray:
    I = fld.I
    M = np.zeros((n, I))
    arrivals = np.zeros(n)
    active = np.arange(n)
    drift = fld.G[0]
    while active.size:
        arrivals[active] += rng.standard_exponential(active.size)
        U = 1.0 / arrivals[active]
        stop = U < eps * M[active].min(axis=1)
        active = active[~stop]
        U = U[~stop]
        if not active.size:
            break
        Z = rng.standard_normal((active.size, I)) @ fld.chol.T
        W = np.exp(Z - Z[:, [0]] - drift[None, :])
        M[active] = np.maximum(M[active], U[:, None] * W)
    return M


def simulate_maxstable_approx(cfg: SimulationConfig) -> np.ndarray:
    """Max-stable Brown-Resnick samples with unit Frechet margins."""
    fld = _field(cfg)
    blocks = []
    for b, start in enumerate(range(0, cfg.n_samples, BLOCK)):
        n = min(BLOCK, cfg.n_samples - start)
        rng = np.random.default_rng([cfg.seed, b, 1])
        if cfg.spectral == "normalized":
            blocks.append(_maxstable_block_normalized(rng, fld, n, cfg.literal_mean))
        else:
            blocks.append(_maxstable_block_drift(rng, fld, n, cfg.truncation))
    return np.vstack(blocks)
