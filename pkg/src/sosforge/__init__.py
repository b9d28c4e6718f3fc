"""Constructive sums of half-regular squares for non-negative Hoelder functions."""

__version__ = "0.1.0"
