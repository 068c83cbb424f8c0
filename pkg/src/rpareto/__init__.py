"""Simulation and peaks-over-threshold inference for Brown-Resnick r-Pareto processes."""

__version__ = "0.1.0"

from .brown_resnick import QmcConfig, exponent_measure, censored_log_density, log_intensity, precompute
from .fit import FitResult, optimize, select_exceedances, transform_margins
from .mvn import MvnEstimate, mvn_cdf
from .objectives import ExceedanceSet, WeightFunction, build_objective
from .risk import RiskFunctional, parse_risk
from .simulate import SimulationConfig, simulate_maxstable_approx, simulate_pareto
from .variogram import Location, VariogramParams, gamma_matrix, regular_grid

__all__ = [
    "ExceedanceSet",
    "FitResult",
    "Location",
    "MvnEstimate",
    "QmcConfig",
    "RiskFunctional",
    "SimulationConfig",
    "VariogramParams",
    "WeightFunction",
    "build_objective",
    "censored_log_density",
    "exponent_measure",
    "gamma_matrix",
    "log_intensity",
    "mvn_cdf",
    "optimize",
    "parse_risk",
    "precompute",
    "regular_grid",
    "select_exceedances",
    "simulate_maxstable_approx",
    "simulate_pareto",
    "transform_margins",
]
