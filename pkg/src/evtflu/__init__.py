"""Peaks-over-threshold modelling of extreme epidemics.

Univariate and three-dimensional generalized Pareto models for weekly
incidence series, with conditional prediction, simulation-calibrated anomaly
detection and prediction-quality assessment.
"""

from .errors import DomainError, EvtFluError, NumericError
from .mvgp import GeneratorFamily, MvGpModel, Submodel, fit_mvgp, gp_log_density
from .predict import conditional_exceedance, predict_level
from .simulate import SimulationConfig, sample_gp
from .unigp import ReturnLevelQuery, UnivariateGpFit, return_level

__all__ = [
    "DomainError", "EvtFluError", "NumericError", "GeneratorFamily", "MvGpModel", "Submodel",
    "fit_mvgp", "gp_log_density", "conditional_exceedance", "predict_level", "SimulationConfig",
    "sample_gp", "ReturnLevelQuery", "UnivariateGpFit", "return_level",
]
__version__ = "0.1.0"
