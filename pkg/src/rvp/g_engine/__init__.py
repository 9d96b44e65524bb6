"""Continuous-limit numerics under a volatility band."""

from .api import (
    GirsanovResult,
    GResult,
    NovikovError,
    NovikovResult,
    SuperResult,
    bs_price,
    density_normalisation,
    g_expectation,
    girsanov_price,
    heat_price,
    is_symmetric_g_martingale,
    novikov_check,
    superreplication_price,
)
from .lattice import PathLattice, control_enumeration_value, exhaustive_value, markov_value
from .model import GModel, GModelError, PricingKernel, g_function, load_model
from .sde import DensityPaths, Paths, consistency_rate, exponential_martingale, simulate_gsde

__all__ = [
    "GModel",
    "GModelError",
    "GResult",
    "GirsanovResult",
    "NovikovError",
    "NovikovResult",
    "PathLattice",
    "Paths",
    "DensityPaths",
    "PricingKernel",
    "SuperResult",
    "bs_price",
    "consistency_rate",
    "control_enumeration_value",
    "density_normalisation",
    "exhaustive_value",
    "exponential_martingale",
    "g_expectation",
    "g_function",
    "girsanov_price",
    "heat_price",
    "is_symmetric_g_martingale",
    "load_model",
    "markov_value",
    "novikov_check",
    "simulate_gsde",
    "superreplication_price",
]
