"""Numerical laboratory for scaling laws of diagonal and quadratic networks.

Exact ERM solvers, message passing, state evolution, learned-weight spectra,
phase/rate tables, and a sweep harness comparing theory with simulation.
"""
from .errors import (ConvergenceError, DivergenceError, InvalidSpecError, NumericalQualityError,
                     RegimeError, ScalelabError, UnsupportedRegimeError)
from .model_gen import DataMode, Model, ProblemSpec

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DivergenceError", "InvalidSpecError", "NumericalQualityError", "RegimeError",
    "ScalelabError", "UnsupportedRegimeError", "DataMode", "Model", "ProblemSpec",
]
