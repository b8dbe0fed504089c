"""Numerical laboratory for perpetual-consumption duality."""

__version__ = "0.1.0"
