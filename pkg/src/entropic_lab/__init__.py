"""Samplers, exact oracles and scaling checks for interfaces above a wall in a weak external field."""

__version__ = "0.1.0"
