"""Switching fluid model of a two-class, two-pool service system with threshold-based sharing."""

__version__ = "0.1.0"
