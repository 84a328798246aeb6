"""Inverse-gamma directed polymer: partition functions, stationary couplings and desk-scale experiments."""

__version__ = "0.1.0"
