"""Bayesian sparse Tucker decomposition and completion."""

from .btd import FitReport, PosteriorState, fit_btd
from .config import FitConfig
from .tensor_core import NumericalFailure, ObservationSet, TuckerModel, reconstruct

__all__ = [
    "FitConfig",
    "FitReport",
    "NumericalFailure",
    "ObservationSet",
    "PosteriorState",
    "TuckerModel",
    "fit_btd",
    "reconstruct",
]
__version__ = "0.1.0"
