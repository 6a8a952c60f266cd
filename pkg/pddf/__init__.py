"""Probabilistic directed distance fields: fitting, rendering, composition and extraction."""

__version__ = "0.1.0"
