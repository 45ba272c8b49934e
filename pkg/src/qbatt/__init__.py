"""Simulation of a resonator-charged transmon-qutrit quantum battery."""

__version__ = "0.1.0"
