"""Numerics for the annealed parabolic Anderson model on a regular tree."""

__version__ = "0.1.0"
