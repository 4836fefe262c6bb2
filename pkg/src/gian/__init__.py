"""Temporal hypergraph and cross-modal attention regression under missing data."""

__version__ = "0.1.0"
