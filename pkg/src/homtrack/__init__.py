"""Simulation and analysis of two-photon interference between distinct emitters."""

__version__ = "0.1.0"
