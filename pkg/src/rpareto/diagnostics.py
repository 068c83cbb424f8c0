"""Model checks: extremal coefficients and conditional exceedance probabilities."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .risk import RiskFunctional, exceeds
from .variogram import VariogramParams, coordinates, eval_variogram, gamma_matrix

TABLE_COLUMNS = ("distance", "pi_model", "pi_empirical", "n_pairs_events")


def extremal_coefficient(params: VariogramParams, h) -> np.ndarray | float:
    """Pairwise extremal coefficient ``2 Phi(sqrt(gamma(h) / 2))`` at lag(s) ``h``."""
    gamma = eval_variogram(params, h)
    out = 2.0 * ndtr(np.sqrt(np.asarray(gamma) / 2.0))
    return float(out) if np.ndim(out) == 0 else out


def extremal_coefficient_from_gamma(gamma) -> np.ndarray | float:
    out = 2.0 * ndtr(np.sqrt(np.asarray(gamma, dtype=float) / 2.0))
    return float(out) if np.ndim(out) == 0 else out


def cond_exceed_model(params: VariogramParams, sites, i: int, j: int) -> float:
    """Model probability that site ``j`` exceeds given that site ``i`` does.

    Computed as ``2 - theta`` so that the identity with the extremal
    coefficient holds exactly in floating point.
    """
    if i == j:
        raise ValueError("sites i and j must differ")
    xy = coordinates(sites)
    theta = extremal_coefficient(params, xy[j] - xy[i])
    return 2.0 - theta


def _joint_counts(data, risk: RiskFunctional, u, site_u):
    data = np.asarray(data, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), (data.shape[1],))
    site_u = u if site_u is None else np.broadcast_to(np.asarray(site_u, dtype=float), (data.shape[1],))
    events = np.asarray(exceeds(risk, data, u), dtype=bool)
    E = (data[events] > site_u).astype(float)
    return E.T @ E  # joint[i, j] = #events with both i and j above; diagonal = #events with i above


def cond_exceed_empirical(data, risk: RiskFunctional, u, i: int, j: int, site_u=None) -> float | None:
    """Empirical conditional exceedance ratio among risk-exceeding rows.

    ``site_u`` are the per-site thresholds of the indicator events (default
    ``u``). Returns ``None`` when no risk event has site ``i`` above its
    threshold.
    """
    joint = _joint_counts(data, risk, u, site_u)
    denom = joint[i, i]
    if denom == 0:
        return None
    return float(joint[i, j] / denom)


@dataclass
class DiagnosticTable:
    distance: np.ndarray
    pi_model: np.ndarray
    pi_empirical: np.ndarray
    n_pairs_events: np.ndarray  # summed conditioning counts over pairs in the bin
    n_pairs: np.ndarray

    def rows(self):
        for row in zip(self.distance, self.pi_model, self.pi_empirical, self.n_pairs_events):
            yield row

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for d, pm, pe, n in self.rows():
                w.writerow([repr(float(d)), repr(float(pm)), repr(float(pe)), int(n)])


def diagnostic_table(
    data,
    sites,
    params: VariogramParams,
    risk: RiskFunctional,
    u,
    site_u=None,
    n_bins: int = 20,
) -> DiagnosticTable:
    """Distance-binned model and empirical conditional exceedance probabilities.

    All ordered pairs ``i != j`` are used. Within a bin, the empirical value
    pools counts (sum of joint counts over sum of conditioning counts) and
    the model value is the mean over pairs. Bins without conditioning events
    are dropped.
    """
    xy = coordinates(sites)
    I = xy.shape[0]
    joint = _joint_counts(data, risk, u, site_u)
    denom = np.broadcast_to(np.diag(joint)[:, None], joint.shape)
    pi_model = 2.0 - extremal_coefficient_from_gamma(gamma_matrix(params, sites))
    dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    off = ~np.eye(I, dtype=bool)
    d, jn, dn, pm = dist[off], joint[off], denom[off], pi_model[off]
    edges = np.linspace(d.min(), d.max(), n_bins + 1)
    which = np.clip(np.digitize(d, edges[1:-1]), 0, n_bins - 1)
    out = {k: [] for k in ("distance", "pi_model", "pi_empirical", "n_pairs_events", "n_pairs")}
    for b in range(n_bins):
        m = which == b
        if not np.any(m) or dn[m].sum() == 0:
            continue
        out["distance"].append(d[m].mean())
        out["pi_model"].append(pm[m].mean())
        out["pi_empirical"].append(jn[m].sum() / dn[m].sum())
        out["n_pairs_events"].append(int(dn[m].sum()))
        out["n_pairs"].append(int(m.sum()))
    return DiagnosticTable(*(np.asarray(out[k]) for k in out))
