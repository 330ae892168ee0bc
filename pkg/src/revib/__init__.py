"""Trajectory forecasting as a linear base plus self and social vibrations."""

__version__ = "0.1.0"
