"""Precision glass thermoforming mold design with a dimensionless neural surrogate."""

__version__ = "0.1.0"
