"""Utility-maximising agents negotiating a shared crossing point."""

__version__ = "0.1.0"
