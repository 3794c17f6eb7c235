"""Particle and regression solvers for regime-switching conditional mean-field control."""

__version__ = "0.1.0"
