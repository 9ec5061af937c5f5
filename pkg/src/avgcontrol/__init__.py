"""Averaged dynamics and averaged controls for random heat and Schrodinger equations."""

__version__ = "0.1.0"
