"""Cooperative tuning of multi-agent optimal-control systems."""
__version__ = "0.1.0"
