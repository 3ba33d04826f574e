"""Hierarchical multi-index sets and sparse stochastic moment matrices."""

__version__ = "0.1.0"
