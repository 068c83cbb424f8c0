"""Randomized rank-1 lattice estimates of multivariate normal probabilities.

Implements a simplified separation-of-variables algorithm (Genz): a pivoted
Cholesky factor with variable prioritisation, a randomly shifted Korobov
lattice with the baker's transform, and a probable error computed from the
spread of the shift replicates.

Everything is written for a *batch* of problems of the same dimension, so
that hundreds of censored-likelihood terms can share one pass over the
lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

ERROR_MULTIPLIER = 3.0
NEG_INF_SENTINEL = -1e100
_EXHAUSTIVE_BUDGET = 5e7
_RANDOM_CANDIDATES = 128


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when the pivoted Cholesky factorisation breaks down."""

    def __init__(self, pivot: int, batch_index: int = 0):
        self.pivot = pivot
        self.batch_index = batch_index
        super().__init__(
            f"covariance matrix is singular at pivot (original index) {pivot}"
            + (f" in batch member {batch_index}" if batch_index else "")
        )


@dataclass(frozen=True)
class MvnEstimate:
    value: float
    probable_error: float
    p: int
    p_prime: int


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    r = int(math.isqrt(n))
    return all(n % f for f in range(3, r + 1, 2))


def lattice_points(p: int, v, shift) -> np.ndarray:
    """Shifted rank-1 lattice ``|2 frac(q v / p + shift) - 1|`` for ``q = 1..p``."""
    if not is_prime(p):
        raise ValueError(f"lattice size p must be prime, got {p}")
    v = np.asarray(v, dtype=np.int64)
    shift = np.asarray(shift, dtype=float)
    if v.shape != shift.shape:
        raise ValueError("generating vector and shift must have equal length")
    q = np.arange(1, p + 1, dtype=np.int64)[:, None]
    # Integer modular product keeps the fractional part exact.
    frac = ((q * v[None, :]) % p) / p + shift[None, :]
    frac -= np.floor(frac)
    return np.abs(2.0 * frac - 1.0)


def korobov_vector(p: int, g: int, dim: int) -> np.ndarray:
    v = np.empty(dim, dtype=np.int64)
    acc = 1
    for j in range(dim):
        v[j] = acc
        acc = (acc * g) % p
    return v


def p2_criterion(p: int, v, weights=None) -> float:
    """Weighted worst-case error ``P_2`` of the unshifted lattice ``v``.

    Product weights default to ``1 / j**2``; without decaying weights the
    criterion is dominated by the origin term in high dimension.
    """
    v = np.asarray(v, dtype=np.int64)
    if weights is None:
        weights = 1.0 / np.arange(1, v.size + 1) ** 2
    k = np.arange(p, dtype=np.int64)[:, None]
    x = ((k * v[None, :]) % p) / p
    b2 = x * x - x + 1.0 / 6.0
    terms = 1.0 + 2.0 * math.pi**2 * np.asarray(weights)[None, :] * b2
    return float(np.mean(np.prod(terms, axis=1)) - 1.0)


@lru_cache(maxsize=256)
def _korobov_generator(p: int, dim: int) -> int:
    candidates = np.arange(1, p, dtype=np.int64)
    if (p - 1) * p * dim > _EXHAUSTIVE_BUDGET:
        rng = np.random.default_rng([p, dim])
        size = min(_RANDOM_CANDIDATES, p - 1)
        candidates = np.sort(rng.choice(candidates, size=size, replace=False))
    best_g, best = 1, math.inf
    for g in candidates:
        crit = p2_criterion(p, korobov_vector(p, int(g), dim))
        if crit < best:
            best_g, best = int(g), crit
    return best_g


def generating_vector(p: int, dim: int) -> np.ndarray:
    """Korobov generating vector ``(1, g, g^2, ...) mod p`` minimising ``P_2``.

    The search is exhaustive over ``g in 1..p-1`` when affordable and uses a
    fixed pseudo-random candidate subset otherwise; either way the result is
    a deterministic function of ``(p, dim)``.
    """
    if not is_prime(p):
        raise ValueError(f"lattice size p must be prime, got {p}")
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if dim == 1:
        return np.ones(1, dtype=np.int64)
    return korobov_vector(p, _korobov_generator(p, dim), dim)


def _truncated_mean(t: np.ndarray) -> np.ndarray:
    """E[Z | Z < t] for standard normal Z, stable for very negative ``t``."""
    log_phi = -0.5 * t * t - 0.5 * math.log(2.0 * math.pi)
    with np.errstate(over="ignore", invalid="ignore"):
        out = -np.exp(log_phi - log_ndtr(t))
    return np.where(np.isfinite(t), out, np.where(t > 0, 0.0, t))


def pivoted_cholesky(upper: np.ndarray, sigma: np.ndarray, rel_tol: float = 1e-12):
    """Batched Cholesky factorisation with Genz-Bretz variable prioritisation.

    At each step the remaining variable with the smallest expected conditional
    probability is moved forward (ties go to the smallest original index).

    Returns ``(L, b, perm)``: lower-triangular factors ``(B, d, d)``, permuted
    upper limits ``(B, d)`` and permutations ``(B, d)``.
    """
    S = np.array(sigma, dtype=float, copy=True)
    b = np.array(upper, dtype=float, copy=True)
    B, d = b.shape
    L = np.zeros_like(S)
    perm = np.tile(np.arange(d), (B, 1))
    rows = np.arange(B)
    cond_var = np.diagonal(S, axis1=1, axis2=2).copy()
    cond_mean = np.zeros((B, d))
    y = np.zeros((B, d))
    scale = np.maximum(np.max(np.abs(cond_var), axis=1), 1e-300)
    for i in range(d):
        rem_var = cond_var[:, i:]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (b[:, i:] - cond_mean[:, i:]) / np.sqrt(np.maximum(rem_var, 0.0))
        t = np.where(rem_var > rel_tol * scale[:, None], t, np.inf)
        tmin = np.min(t, axis=1, keepdims=True)
        cand = np.where(t == tmin, perm[:, i:], d + 1)
        j = i + np.argmin(cand, axis=1)
        for arr in (b, perm, cond_var, cond_mean):
            arr[rows, i], arr[rows, j] = arr[rows, j].copy(), arr[rows, i].copy()
        S[rows, i, :], S[rows, j, :] = S[rows, j, :].copy(), S[rows, i, :].copy()
        S[rows, :, i], S[rows, :, j] = S[rows, :, j].copy(), S[rows, :, i].copy()
        L[rows, i, :], L[rows, j, :] = L[rows, j, :].copy(), L[rows, i, :].copy()

        piv = cond_var[:, i]
        bad = piv <= rel_tol * scale
        if np.any(bad):
            k = int(np.argmax(bad))
            raise SingularCovarianceError(int(perm[k, i]), k)
        lii = np.sqrt(piv)
        L[:, i, i] = lii
        if i + 1 < d:
            col = S[:, i + 1 :, i] - np.einsum("bjm,bm->bj", L[:, i + 1 :, :i], L[:, i, :i])
            L[:, i + 1 :, i] = col / lii[:, None]
        ti = (b[:, i] - cond_mean[:, i]) / lii
        y[:, i] = _truncated_mean(ti)
        if i + 1 < d:
            cond_var[:, i + 1 :] -= L[:, i + 1 :, i] ** 2
            cond_mean[:, i + 1 :] += L[:, i + 1 :, i] * y[:, i][:, None]
    return L, b, perm


def genz_order(upper, sigma) -> np.ndarray:
    """Variable orderings ``(B, d)`` chosen by :func:`pivoted_cholesky`."""
    return pivoted_cholesky(np.asarray(upper, dtype=float), np.asarray(sigma, dtype=float))[2]


def _ordered_cholesky(upper: np.ndarray, sigma: np.ndarray, orders: np.ndarray):
    B = upper.shape[0]
    perm = np.asarray(orders, dtype=np.int64)
    rows = np.arange(B)[:, None, None]
    b = np.take_along_axis(upper, perm, axis=1)
    S = sigma[rows, perm[:, :, None], perm[:, None, :]]
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        bad = [k for k in range(B) if np.any(np.linalg.eigvalsh(S[k]) <= 0)]
        raise SingularCovarianceError(0, bad[0] if bad else 0) from None
    return L, b


def _running_mean_var(samples: np.ndarray):
    """Running mean and variance-of-the-mean over the last axis (Genz update)."""
    value = np.zeros(samples.shape[:-1])
    var = np.zeros(samples.shape[:-1])
    for k in range(1, samples.shape[-1] + 1):
        delta = (samples[..., k - 1] - value) / k
        value = value + delta
        var = (k - 2) * var / k + delta**2
    return value, var


def mvn_cdf_batch(upper, sigma, p: int = 499, p_prime: int = 10, seeds=None, rng=None, orders=None):
    """Estimate ``P(N(0, sigma_b) <= upper_b)`` for a batch of problems.

    Parameters
    ----------
    upper : (B, d) array
        Upper integration limits. ``+inf`` entries are marginalised out; an
        entry below :data:`NEG_INF_SENTINEL` (or ``-inf``) makes the
        probability exactly zero.
    sigma : (B, d, d) array
        Covariance matrices.
    p, p_prime : int
        Lattice size (prime) and number of random shifts (>= 2).
    seeds : sequence, optional
        One seed (int or tuple) per batch member; each member draws its shifts
        from its own stream, so results do not depend on batch composition.
    rng : numpy Generator, optional
        Used to draw all shifts when ``seeds`` is not given.
    orders : (B, d) integer array, optional
        Fixed variable orderings replacing the per-call prioritisation. With
        fixed seeds this makes the estimate a continuous function of the
        inputs. All limits must then be finite.

    Returns
    -------
    values, errors : (B,) arrays
        Estimates and probable errors ``3 * sqrt(V)`` with ``V`` the variance
        of the shift average.
    """
    upper = np.asarray(upper, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if upper.ndim != 2 or sigma.shape != upper.shape + (upper.shape[1],):
        raise ValueError("expected upper of shape (B, d) and sigma of shape (B, d, d)")
    if p_prime < 2:
        raise ValueError("at least two random shifts are needed for an error estimate")
    if not is_prime(p):
        raise ValueError(f"lattice size p must be prime, got {p}")
    B, d = upper.shape
    values = np.ones(B)
    errors = np.zeros(B)
    if B == 0 or d == 0:
        return values, errors

    if orders is not None:
        orders = np.asarray(orders, dtype=np.int64)
        if orders.shape != upper.shape:
            raise ValueError("orders must have the shape of upper")
        if not np.all(np.isfinite(upper)):
            raise ValueError("fixed orderings need finite upper limits")
    zero = np.any(upper <= NEG_INF_SENTINEL, axis=1)
    values[zero] = 0.0
    finite_mask = np.isfinite(upper)
    live = np.nonzero(~zero)[0]
    if live.size == 0:
        return values, errors

    # Marginalise +inf limits; group the remaining problems by dimension.
    groups: dict[int, list[int]] = {}
    for bidx in live:
        groups.setdefault(int(finite_mask[bidx].sum()), []).append(int(bidx))
    for dim, members in groups.items():
        if dim == 0:
            continue
        idx = np.array(members)
        keep = finite_mask[idx]
        sub_u = upper[idx][keep].reshape(len(idx), dim)
        sub_s = np.stack([sigma[m][np.ix_(finite_mask[m], finite_mask[m])] for m in idx])
        member_seeds = None if seeds is None else [seeds[m] for m in idx]
        member_orders = None if orders is None else orders[idx]
        v, e = _mvn_same_dim(sub_u, sub_s, p, p_prime, member_seeds, rng, member_orders)
        values[idx] = v
        errors[idx] = e
    return values, errors


def _mvn_same_dim(upper, sigma, p, p_prime, seeds, rng, orders=None):
    B, d = upper.shape
    if d == 1:
        sd = np.sqrt(sigma[:, 0, 0])
        if np.any(sd <= 0):
            raise SingularCovarianceError(0, int(np.argmax(sd <= 0)))
        return ndtr(upper[:, 0] / sd), np.zeros(B)

    if orders is None:
        L, b, _ = pivoted_cholesky(upper, sigma)
    else:
        L, b = _ordered_cholesky(upper, sigma, orders)
    m = d - 1
    if seeds is not None:
        shifts = np.stack([np.random.default_rng(s).random((p_prime, m)) for s in seeds])
    else:
        gen = rng if rng is not None else np.random.default_rng()
        shifts = gen.random((B, p_prime, m))
    v = generating_vector(p, m)
    q = np.arange(1, p + 1, dtype=np.int64)[None, :]
    base = ((v[:, None] * q) % p) / p  # (m, p)
    # Layout (B, m, p' * p): prefixes over the dimension axis stay contiguous.
    w = base[None, :, None, :] + shifts.transpose(0, 2, 1)[:, :, :, None]
    w -= np.floor(w)
    w = np.abs(2.0 * w - 1.0).reshape(B, m, p_prime * p)

    n = p_prime * p
    diag = np.diagonal(L, axis1=1, axis2=2)
    e = np.broadcast_to(ndtr(b[:, 0] / diag[:, 0])[:, None], (B, n)).copy()
    f = e.copy()
    Y = np.empty((B, m, n))
    hi = np.nextafter(1.0, 0.0)
    for i in range(1, d):
        Y[:, i - 1, :] = ndtri(np.clip(w[:, i - 1, :] * e, 1e-300, hi))
        s = np.matmul(L[:, i, None, :i], Y[:, :i, :])[:, 0, :]
        e = ndtr((b[:, i, None] - s) / diag[:, i, None])
        f *= e
    per_shift = f.reshape(B, p_prime, p).mean(axis=2)
    value, var = _running_mean_var(per_shift)
    return value, ERROR_MULTIPLIER * np.sqrt(np.maximum(var, 0.0))


def _validate_covariance(sigma: np.ndarray, name: str = "sigma") -> None:
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(sigma)):
        raise ValueError(f"{name} has non-finite entries")
    tol = 1e-10 * max(1.0, float(np.max(np.abs(sigma))))
    if np.max(np.abs(sigma - sigma.T)) > tol:
        raise ValueError(f"{name} is not symmetric")


def mvn_cdf(upper, sigma, p: int = 499, p_prime: int = 10, seed=None) -> MvnEstimate:
    """Probability that ``N(0, sigma)`` lies below ``upper`` componentwise."""
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    _validate_covariance(sigma)
    if sigma.shape[0] != upper.shape[0]:
        raise ValueError("upper and sigma dimensions differ")
    if np.any(np.isnan(upper)):
        raise ValueError("upper limits contain NaN")
    rng = np.random.default_rng(seed)
    values, errors = mvn_cdf_batch(upper[None, :], sigma[None, :, :], p, p_prime, rng=rng)
    value = float(np.clip(values[0], 0.0, 1.0))
    return MvnEstimate(value, float(errors[0]), p, p_prime)
