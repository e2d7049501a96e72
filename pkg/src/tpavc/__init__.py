"""Temporal prototype-aware multi-agent active voltage control."""

__version__ = "0.1.0"
