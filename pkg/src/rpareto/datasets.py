"""Bundled example data.

Two datasets ship with the package:

``fixture``
    A 4 x 4 grid with 1000 unit-scale Pareto samples written by
    ``rpareto simulate``, used for end-to-end command-line checks.
``case_study``
    A synthetic 20 x 20 gridded record with skewed, site-specific margins.
    At 50000 rows by 400 sites it is too large to ship as text, so only its
    recipe (``case_study.json``) is bundled and the values are regenerated
    deterministically on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .simulate import SimulationConfig, simulate_pareto
from .variogram import Location, VariogramParams, regular_grid


def data_path(name: str) -> Path:
    """Filesystem path of a file in the bundled data directory."""
    return Path(str(resources.files("rpareto") / "data" / name))


def fixture_paths() -> dict[str, Path]:
    """Paths of the small simulated fixture: ``sites``, ``data`` and ``truth``."""
    return {k: data_path(f"fixture_{k}.{ext}") for k, ext in (("sites", "csv"), ("data", "csv"), ("truth", "json"))}


def fixture_truth() -> VariogramParams:
    with open(fixture_paths()["truth"]) as fh:
        t = json.load(fh)
    return VariogramParams(t["kappa"], t["tau"], t.get("eta", 0.0), t.get("a", 1.0), t.get("half_factor", True))


@dataclass
class CaseStudy:
    sites: list[Location]
    data: np.ndarray  # (N, I) on the original, non-Pareto scale
    truth: VariogramParams
    shape: np.ndarray  # per-site GPD shape of the upper tail
    scale: np.ndarray


def case_study_recipe() -> dict:
    with open(data_path("case_study.json")) as fh:
        return json.load(fh)


def case_study(n_samples: int | None = None) -> CaseStudy:
    """Regenerate the synthetic case-study dataset.

    A Pareto process with the recipe's variogram is simulated on the grid and
    each site ``j`` is mapped to ``mu_j + sigma_j (x^xi_j - 1) / xi_j``,
    which has a generalised Pareto upper tail with shape ``xi_j``. Site
    parameters come from a seeded generator, so repeated calls agree exactly.
    """
    r = case_study_recipe()
    n = r["n_samples"] if n_samples is None else n_samples
    sites = regular_grid(r["nx"], r["ny"], r["extent"])
    truth = VariogramParams(r["kappa"], r["tau"], half_factor=r["half_factor"])
    x = simulate_pareto(SimulationConfig(n, r["seed"], truth, sites))
    rng = np.random.default_rng([r["seed"], 99])
    I = len(sites)
    xi = rng.uniform(*r["shape_range"], size=I)
    sigma = rng.uniform(*r["scale_range"], size=I)
    mu = rng.uniform(*r["location_range"], size=I)
    y = mu + sigma * np.expm1(xi * np.log(x)) / xi
    return CaseStudy(sites, y, truth, xi, sigma)
