"""Odd-one-out weak supervision workbench."""

__version__ = "0.1.0"
