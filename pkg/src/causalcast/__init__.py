"""Lagged causal discovery and token-based probabilistic forecasting for
multivariate (macroeconomic) time series."""

__version__ = "0.1.0"
