"""Martingale approximation of stationary processes."""

__version__ = "0.1.0"
