"""Offline analyzer for single sign-on login traffic."""

__version__ = "0.1.0"
