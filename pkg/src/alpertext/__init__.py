"""Smooth Alpert frames, the paraboloid extension operator and related numerics."""

__version__ = "0.1.0"
