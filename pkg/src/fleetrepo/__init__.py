"""Preference-aware sequential repositioning for ride-hailing fleets on a grid city."""

__version__ = "0.1.0"
