"""Power semi-variogram with geometric anisotropy.

The model is ``gamma(h) = c * (||Omega h|| / tau) ** kappa`` where ``Omega``
rotates by ``eta`` and stretches the second axis by ``a``, and ``c`` is 1/2
when ``half_factor`` is set (the simulation-study convention) and 1 otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

PARAM_NAMES = ("kappa", "tau", "eta", "a")


class DuplicateSiteWarning(UserWarning):
    """Two sites share coordinates, so derived covariance matrices are singular."""


@dataclass(frozen=True)
class Location:
    id: str
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"site {self.id!r} has non-finite coordinates")


@dataclass(frozen=True)
class VariogramParams:
    kappa: float
    tau: float
    eta: float = 0.0
    a: float = 1.0
    half_factor: bool = True

    def __post_init__(self):
        if not 0.0 < self.kappa <= 2.0:
            raise ValueError(f"kappa must satisfy 0 < kappa <= 2, got {self.kappa}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        _check_angle(self.eta)
        if not self.a >= 1.0:
            raise ValueError(f"a must be >= 1, got {self.a}")

    def as_dict(self) -> dict:
        return {name: float(getattr(self, name)) for name in PARAM_NAMES}

    def with_values(self, **values) -> "VariogramParams":
        return replace(self, **values)


def _check_angle(eta: float) -> None:
    if not -math.pi / 2 < eta <= math.pi / 2:
        raise ValueError(f"eta must lie in (-pi/2, pi/2], got {eta}")


def anisotropy_matrix(eta: float, a: float) -> np.ndarray:
    """Rotation by ``eta`` followed by a stretch ``a`` of the second axis."""
    _check_angle(eta)
    if not a >= 1.0:
        raise ValueError(f"a must be >= 1, got {a}")
    c, s = math.cos(eta), math.sin(eta)
    return np.array([[c, -s], [a * s, a * c]])


def eval_variogram(params: VariogramParams, h) -> np.ndarray | float:
    """Evaluate the semi-variogram at lag(s) ``h`` of shape ``(..., 2)``."""
    h = np.asarray(h, dtype=float)
    omega = anisotropy_matrix(params.eta, params.a)
    dist = np.linalg.norm(h @ omega.T, axis=-1)
    gamma = (dist / params.tau) ** params.kappa
    if params.half_factor:
        gamma = 0.5 * gamma
    if gamma.ndim == 0:
        return float(gamma)
    return gamma


def coordinates(sites: Sequence[Location] | np.ndarray) -> np.ndarray:
    if isinstance(sites, np.ndarray):
        coords = np.asarray(sites, dtype=float)
    else:
        coords = np.array([[s.x, s.y] for s in sites], dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("sites must be an (I, 2) array or a list of Location")
    return coords


def duplicate_pairs(sites) -> list[tuple[int, int]]:
    coords = coordinates(sites)
    diff = coords[:, None, :] - coords[None, :, :]
    same = np.all(diff == 0.0, axis=-1)
    i, j = np.nonzero(np.triu(same, k=1))
    return list(zip(i.tolist(), j.tolist()))


def gamma_matrix(params: VariogramParams, sites) -> np.ndarray:
    """Pairwise semi-variogram matrix ``G[j, k] = gamma(s_j - s_k)``.

    Duplicated coordinates are allowed but emit a :class:`DuplicateSiteWarning`.
    """
    coords = coordinates(sites)
    if coords.shape[0] < 2:
        raise ValueError("at least two sites are required")
    dups = duplicate_pairs(coords)
    if dups:
        warnings.warn(
            f"{len(dups)} duplicated site pair(s), first {dups[0]}; "
            "covariances built from this matrix will be singular",
            DuplicateSiteWarning,
            stacklevel=2,
        )
    lags = coords[:, None, :] - coords[None, :, :]
    G = eval_variogram(params, lags)
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, 0.0)
    return G


def regular_grid(nx: int, ny: int, extent: float = 100.0, prefix: str = "s") -> list[Location]:
    """``nx * ny`` sites on a regular grid spanning ``[0, extent]^2``."""
    xs = np.linspace(0.0, extent, nx)
    ys = np.linspace(0.0, extent, ny)
    sites = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            sites.append(Location(f"{prefix}{j * nx + i}", float(x), float(y)))
    return sites
