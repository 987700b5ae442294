"""Cyber-attack impact co-simulation for coupled gas pipeline and power systems."""

__version__ = "0.1.0"
