"""Continual test-time adaptation on synthetic drift streams, plus an asymmetric co-optimal transport solver."""

__version__ = "0.1.0"
