"""Numerical laboratory for optimal vector quantization and its local asymptotics."""

__version__ = "0.1.0"
