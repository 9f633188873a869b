"""Distributed value decomposition networks over switching communication graphs."""

__version__ = "0.1.0"
