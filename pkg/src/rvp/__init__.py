"""Pricing under volatility uncertainty: exact finite-scale theory on scenario
trees and continuous-limit numerics under a volatility band."""

__version__ = "0.1.0"
