"""Flexibility planning for EV charging pools on radial distribution feeders."""

__version__ = "0.1.0"
