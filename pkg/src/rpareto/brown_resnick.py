"""Brown-Resnick exponent measure, intensity and censored density.

Two algebraically equivalent intensities are provided:

* the anchored form, built from log-ratios ``log(x_j / x_a) + gamma_{j,a}``
  against an anchor coordinate ``a`` and the ``(I-1)``-dimensional matrix
  ``gamma_{i,a} + gamma_{j,a} - gamma_{i,j}``;
* the symmetric form, built from a full ``I x I`` covariance ``Sigma*`` of a
  Gaussian process with the given semi-variogram, which has simple closed
  forms for the gradient and diagonal Hessian of ``log lambda``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .mvn import genz_order, mvn_cdf_batch
from .variogram import VariogramParams, duplicate_pairs, gamma_matrix

LOG_2PI = math.log(2.0 * math.pi)
_JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


@dataclass(frozen=True)
class QmcConfig:
    """Lattice size ``p``, number of shifts ``p_prime`` and base seed."""

    p: int = 499
    p_prime: int = 3
    seed: int = 0


def robust_cholesky(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor with a relative diagonal jitter ladder.

    Raises ``np.linalg.LinAlgError`` if even the largest jitter fails.
    """
    scale = max(float(np.max(np.abs(np.diag(A)))), 1e-300)
    eye = np.eye(A.shape[0])
    for jitter in _JITTER_LADDER:
        try:
            return np.linalg.cholesky(A + jitter * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(f"{what} is not positive definite (jitter up to 1e-8 failed)")


def _site_ids(sites) -> list[str]:
    if isinstance(sites, np.ndarray):
        return [str(i) for i in range(sites.shape[0])]
    return [s.id for s in sites]


def _check_distinct(sites) -> None:
    dups = duplicate_pairs(sites)
    if dups:
        ids = _site_ids(sites)
        i, j = dups[0]
        raise np.linalg.LinAlgError(
            f"sites {ids[i]!r} and {ids[j]!r} coincide; Sigma* is singular"
        )


def _check_positive(x: np.ndarray) -> None:
    if np.any(~(x > 0)):
        raise ValueError("all components of x must be strictly positive")


@dataclass(frozen=True)
class BrPrecomputed:
    """Per-parameter cache for the symmetric intensity form."""

    gamma_mat: np.ndarray  # semi-variogram matrix G
    sigma_star: np.ndarray
    chol: np.ndarray
    logdet: float
    precision: np.ndarray  # (Sigma*)^-1
    rho: np.ndarray
    Gamma: np.ndarray
    sigma_diag: np.ndarray
    linear: np.ndarray  # coefficient of log x in the exponent
    constant: float  # log-intensity constant

    @property
    def dim(self) -> int:
        return self.rho.shape[0]


def precompute(params: VariogramParams | None, sites=None, *, gamma_mat=None, offset=None) -> BrPrecomputed:
    """Build ``Sigma*`` and the quantities of the symmetric intensity.

    ``Sigma*[j, k] = G[j, 0] + G[k, 0] - G[j, k] + c`` is the covariance of
    ``Z(s) - Z(s_0) + xi`` with ``xi ~ N(0, c)`` independent: it has the
    prescribed semi-variogram and is positive definite for distinct sites.
    The default ``c`` is the mean of ``G[0, 1:]``; the intensity does not
    depend on it.
    """
    if gamma_mat is None:
        _check_distinct(sites)
        gamma_mat = gamma_matrix(params, sites)
    G = np.asarray(gamma_mat, dtype=float)
    I = G.shape[0]
    if I < 2:
        raise ValueError("at least two sites are required")
    if offset is None:
        offset = float(np.mean(G[0, 1:]))
        if not offset > 0:
            offset = 1.0
    S = G[:, [0]] + G[[0], :] - G + offset
    chol = robust_cholesky(S, "Sigma*")
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    precision = cho_solve((chol, True), np.eye(I))
    precision = 0.5 * (precision + precision.T)
    rho = precision.sum(axis=1)
    A = float(rho.sum())
    Gamma = precision - np.outer(rho, rho) / A
    sigma = np.diag(S).copy()
    Qs = precision @ sigma
    rs = float(rho @ sigma)
    linear = 2.0 * rho / A + Qs - rho * rs / A
    quad_const = 0.25 * float(sigma @ Qs) - 0.25 * rs * rs / A + rs / A - 1.0 / A
    constant = -0.5 * logdet - 0.5 * math.log(A) - 0.5 * (I - 1) * LOG_2PI - 0.5 * quad_const
    return BrPrecomputed(G, S, chol, logdet, precision, rho, Gamma, sigma, linear, constant)


def log_intensity(pre: BrPrecomputed, x) -> np.ndarray | float:
    """Symmetric-form ``log lambda(x)`` for one vector or a batch ``(N, I)``."""
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    lx = np.log(x)
    quad = np.einsum("...i,ij,...j->...", lx, pre.Gamma, lx)
    out = pre.constant - lx.sum(axis=-1) - 0.5 * (quad + lx @ pre.linear)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EngelkeDecomposition:
    """Anchored decomposition: ``Sigma_theta`` and the map ``x -> x_tilde``."""

    gamma_mat: np.ndarray
    anchor: int
    others: np.ndarray
    sigma_theta: np.ndarray
    chol: np.ndarray
    logdet: float

    def x_tilde(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = self.anchor
        return np.log(x[..., self.others] / x[..., [a]]) + self.gamma_mat[self.others, a]


def engelke_decomposition(gamma_mat, anchor: int = 0) -> EngelkeDecomposition:
    G = np.asarray(gamma_mat, dtype=float)
    I = G.shape[0]
    others = np.array([j for j in range(I) if j != anchor])
    ga = G[others, anchor]
    sigma = ga[:, None] + ga[None, :] - G[np.ix_(others, others)]
    chol = robust_cholesky(sigma, "Sigma_theta")
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return EngelkeDecomposition(G, anchor, others, sigma, chol, logdet)


def log_intensity_engelke(dec: EngelkeDecomposition, x) -> np.ndarray | float:
    """Anchored-form ``log lambda(x)``."""
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    xt = dec.x_tilde(x)
    z = solve_triangular(dec.chol, np.atleast_2d(xt).T, lower=True)
    maha = np.sum(z * z, axis=0).reshape(xt.shape[:-1])
    I = x.shape[-1]
    out = (
        -0.5 * dec.logdet
        - 0.5 * (I - 1) * LOG_2PI
        - np.log(x[..., dec.anchor])
        - np.log(x).sum(axis=-1)
        - 0.5 * maha
    )
    return float(out) if np.ndim(out) == 0 else out


def score_components(pre: BrPrecomputed, x):
    """Gradient and diagonal Hessian of ``log lambda`` with respect to ``x``.

    Works on a single vector or a batch ``(N, I)``; returns two arrays of the
    same shape as ``x``.
    """
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    lx = np.log(x)
    Gl = lx @ pre.Gamma  # Gamma symmetric
    c = 1.0 + 0.5 * pre.linear
    grad = -(Gl + c) / x
    hess = (Gl + c - np.diag(pre.Gamma)) / (x * x)
    return grad, hess


def laplacian(pre: BrPrecomputed, x) -> np.ndarray | float:
    """Laplacian of ``log lambda`` written term by term (diagonal, off-diagonal, linear)."""
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    dG = np.diag(pre.Gamma)
    off = pre.Gamma - np.diag(dG)
    x2 = x * x
    term_diag = -np.sum(dG * (1.0 - lx) / x2, axis=-1)
    term_off = np.sum((lx @ off) / x2, axis=-1)
    term_lin = np.sum((2.0 + pre.linear) / (2.0 * x2), axis=-1)
    out = term_diag + term_off + term_lin
    return float(out) if np.ndim(out) == 0 else out


def _exponent_measure_problems(G: np.ndarray, x: np.ndarray):
    """Upper limits ``eta_i`` and correlations ``R_i`` of the ``I`` MVN terms."""
    I = G.shape[0]
    uppers = np.empty((I, I - 1))
    corrs = np.empty((I, I - 1, I - 1))
    for i in range(I):
        others = np.array([j for j in range(I) if j != i])
        gi = G[i, others]
        uppers[i] = np.sqrt(gi / 2.0) + np.log(x[others] / x[i]) / np.sqrt(2.0 * gi)
        num = gi[:, None] + gi[None, :] - G[np.ix_(others, others)]
        corrs[i] = num / (2.0 * np.sqrt(np.outer(gi, gi)))
    return uppers, corrs


def exponent_measure_orderings(G: np.ndarray, x) -> np.ndarray | None:
    """Variable orderings ``(I, I-1)`` of the ``I`` MVN terms of ``Lambda(x)``."""
    G = np.asarray(G, dtype=float)
    if G.shape[0] < 3:
        return None
    uppers, corrs = _exponent_measure_problems(G, np.asarray(x, dtype=float))
    return genz_order(uppers, corrs)


def exponent_measure_from_gamma(G: np.ndarray, x, qmc: QmcConfig = QmcConfig(), tag: int = 0, orders=None):
    """``Lambda(x) = sum_i Phi_{I-1}(eta_i; R_i) / x_i`` and its probable error.

    Each of the ``I`` terms draws its lattice shifts from
    ``(qmc.seed, tag, i)`` so repeated calls at different parameters share
    random numbers. ``orders`` fixes the variable orderings (see
    :func:`exponent_measure_orderings`).
    """
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    G = np.asarray(G, dtype=float)
    I = G.shape[0]
    if I == 1:
        return 1.0 / float(x[0]), 0.0
    offdiag = G[~np.eye(I, dtype=bool)]
    if np.any(offdiag <= 0):
        raise np.linalg.LinAlgError("zero semi-variogram between distinct sites")
    uppers, corrs = _exponent_measure_problems(G, x)
    if I == 2:
        probs = ndtr(uppers[:, 0])
        errs = np.zeros(2)
    else:
        seeds = [(qmc.seed, tag, i) for i in range(I)]
        probs, errs = mvn_cdf_batch(uppers, corrs, qmc.p, qmc.p_prime, seeds=seeds, orders=orders)
    value = float(np.sum(probs / x))
    err = float(np.sqrt(np.sum((errs / x) ** 2)))
    return value, err


def exponent_measure(params: VariogramParams, sites, x, qmc: QmcConfig = QmcConfig()):
    """Exponent measure ``Lambda(x) = nu{A_max(x)}`` with its probable error."""
    _check_distinct(sites)
    return exponent_measure_from_gamma(gamma_matrix(params, sites), x, qmc)


# ---------------------------------------------------------------- censoring


@dataclass
class _CensoredPiece:
    event: int
    density_part: float
    upper: np.ndarray
    cov: np.ndarray


def _censored_piece(G: np.ndarray, x: np.ndarray, u: np.ndarray, anchor: int | None, event: int):
    exceed = x > u
    if not np.any(exceed):
        raise ValueError(f"event {event} has no component above its threshold")
    E = np.nonzero(exceed)[0]
    C = np.nonzero(~exceed)[0]
    a = int(E[0]) if anchor is None else int(anchor)
    if not exceed[a]:
        raise ValueError("anchor coordinate must exceed its threshold")
    E_rest = E[E != a]
    ga = G[:, a]
    # log of 1 / (x_a^2 x_{E \ a}) phi_{k-1}(x_tilde_E; Sigma_EE)
    dens = -2.0 * math.log(x[a]) - float(np.sum(np.log(x[E_rest])))
    upper = np.log(u[C] / x[a]) + ga[C]
    S_CC = ga[C][:, None] + ga[C][None, :] - G[np.ix_(C, C)]
    if E_rest.size:
        xt = np.log(x[E_rest] / x[a]) + ga[E_rest]
        S_EE = ga[E_rest][:, None] + ga[E_rest][None, :] - G[np.ix_(E_rest, E_rest)]
        S_CE = ga[C][:, None] + ga[E_rest][None, :] - G[np.ix_(C, E_rest)]
        L = robust_cholesky(S_EE, "Sigma_EE")
        z = solve_triangular(L, xt, lower=True)
        dens += (
            -0.5 * E_rest.size * LOG_2PI
            - float(np.sum(np.log(np.diag(L))))
            - 0.5 * float(z @ z)
        )
        if C.size:
            B = solve_triangular(L, S_CE.T, lower=True)  # L^-1 S_EC
            upper = upper - B.T @ z
            S_CC = S_CC - B.T @ B
    return _CensoredPiece(event, dens, upper, 0.5 * (S_CC + S_CC.T))


def _censored_pieces(G, X, u, anchors, event_ids):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    u = np.asarray(u, dtype=float)
    _check_positive(X)
    N = X.shape[0]
    if event_ids is None:
        event_ids = range(N)
    return [
        _censored_piece(G, X[n], u, None if anchors is None else anchors[n], event_ids[n])
        for n in range(N)
    ]


def _group_by_dim(pieces) -> dict[int, list[int]]:
    by_dim: dict[int, list[int]] = {}
    for n, pc in enumerate(pieces):
        by_dim.setdefault(pc.upper.size, []).append(n)
    return by_dim


def censored_orderings(G, X, u, anchors=None, event_ids=None) -> dict:
    """Variable ordering of each event's censored MVN problem, keyed by event id."""
    pieces = _censored_pieces(np.asarray(G, dtype=float), X, u, anchors, event_ids)
    out = {}
    for dim, members in _group_by_dim(pieces).items():
        if dim < 2:
            continue
        perms = genz_order(
            np.stack([pieces[n].upper for n in members]), np.stack([pieces[n].cov for n in members])
        )
        for n, perm in zip(members, perms):
            out[pieces[n].event] = perm
    return out


def censored_terms(
    G: np.ndarray,
    X: np.ndarray,
    u: np.ndarray,
    qmc: QmcConfig = QmcConfig(),
    anchors: Sequence[int | None] | None = None,
    event_ids: Sequence[int] | None = None,
    orders: dict | None = None,
):
    """Per-event censored log-density numerators (without the normaliser).

    Returns ``(values, errors)`` where ``values[n]`` is the log of the
    Gaussian-density factor times the censored MVN probability for event
    ``n``, and ``errors[n]`` the probable error of that probability.
    MVN problems of equal dimension are evaluated in one batch; event ``n``
    always uses shifts seeded by ``(qmc.seed, 1, event_ids[n])``. ``orders``
    maps event ids to fixed variable orderings (see :func:`censored_orderings`).
    """
    pieces = _censored_pieces(G, X, u, anchors, event_ids)
    values = np.array([pc.density_part for pc in pieces])
    errors = np.zeros(len(pieces))
    for dim, members in _group_by_dim(pieces).items():
        if dim == 0:
            continue
        uppers = np.stack([pieces[n].upper for n in members])
        covs = np.stack([pieces[n].cov for n in members])
        seeds = [(qmc.seed, 1, int(pieces[n].event)) for n in members]
        perms = None
        if orders is not None and dim >= 2:
            perms = np.stack([orders[pieces[n].event] for n in members])
        probs, errs = mvn_cdf_batch(uppers, covs, qmc.p, qmc.p_prime, seeds=seeds, orders=perms)
        with np.errstate(divide="ignore"):
            values[members] += np.log(np.clip(probs, 0.0, 1.0))
        errors[members] = errs
    return values, errors


def censored_log_density(
    params: VariogramParams,
    sites,
    x,
    u,
    qmc: QmcConfig = QmcConfig(),
    anchor: int | None = None,
) -> float:
    """Log censored density of ``x`` on ``A_max(u)``.

    Coordinates at or below their threshold are integrated out from zero to
    the threshold; the result is normalised by ``Lambda(u)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not np.any(x > u):
        raise ValueError("x must exceed u in at least one coordinate")
    _check_distinct(sites)
    G = gamma_matrix(params, sites)
    vals, _ = censored_terms(G, x[None, :], u, qmc, anchors=None if anchor is None else [anchor])
    lam_u, _ = exponent_measure_from_gamma(G, u, qmc, tag=2)
    return float(vals[0] - math.log(lam_u))
