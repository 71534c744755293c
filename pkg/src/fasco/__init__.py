"""Lightweight learned cost estimator for execution plans."""

__version__ = "0.1.0"
