"""Simulation and diagnostics for parabolic SPDEs with sub-linear multiplicative colored noise."""

__version__ = "0.1.0"
