"""Robust data-driven predictive control from short, non-exciting data records."""

__version__ = "0.1.0"
