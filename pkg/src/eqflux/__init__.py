"""Equilibrated-flux error estimation for DG-in-time / hp-in-space heat equation solvers."""

__version__ = "0.1.0"
