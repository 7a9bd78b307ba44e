"""
Exercise boundaries and prices of American Puts under time-dependent
jump-diffusions.
"""

from .__version__ import __version__
from .params import ParamCurve, ParamSet, build_time_change
from .pricer import PriceQuery, PriceTable, price_at, price_query
from .volterra import SolverConfig, solve_boundary, solve_boundary_with_diagnostics

__all__ = [
    "ParamCurve",
    "ParamSet",
    "PriceQuery",
    "PriceTable",
    "SolverConfig",
    "build_time_change",
    "price_at",
    "price_query",
    "solve_boundary",
    "solve_boundary_with_diagnostics",
]
