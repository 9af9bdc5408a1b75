"""Numerical construction and verification of simple pp-wave spacetimes over flat tori."""

__version__ = "0.1.0"
