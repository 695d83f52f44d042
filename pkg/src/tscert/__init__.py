"""Randomized-smoothing certification for time-series classifiers with
mask-based self-ensembles."""

__version__ = "0.1.0"
