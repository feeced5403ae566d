"""Overlapping domain-decomposition ADMM for ptychographic phase retrieval."""

__version__ = "0.1.0"
