"""Separable correlation covariance estimation."""

__version__ = "0.3.0"
