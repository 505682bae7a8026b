"""Semantic scene graphs from traffic recordings and graph-network acceleration prediction."""

__version__ = "0.1.0"
