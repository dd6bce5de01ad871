"""Planar two-agent cooperative-transport testbed."""

__version__ = "0.1.0"
