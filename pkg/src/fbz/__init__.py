"""Numerical toolkit for Besov-type energies on discrete fractal spaces."""

__version__ = "0.1.0"
