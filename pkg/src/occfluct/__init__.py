"""Simulation and numerical verification toolkit for the (d, alpha, beta)-branching
particle system and its sub-fractional stable occupation-time limit."""

__version__ = "0.1.0"
