"""Hierarchical Bayesian B-spline forecasting of fleet failure-rate curves."""

__version__ = "0.1.0"
