"""Exact prediction variances for linear combinations of GMRF variables."""
