"""Optimal stopping laboratory for sequential testing and quickest detection
of a drift in a one-dimensional diffusion."""

__version__ = "0.1.0"
