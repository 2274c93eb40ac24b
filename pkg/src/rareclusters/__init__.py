"""Rare-event clustering for dynamically generated processes."""
__version__ = "0.1.0"
