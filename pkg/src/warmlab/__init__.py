"""Desk-scale laboratory for learning-rate warmup policies."""

__version__ = "0.1.0"
