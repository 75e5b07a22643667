"""Stochastic transition models on grid worlds: SGAN and baselines."""

__version__ = "0.1.0"
