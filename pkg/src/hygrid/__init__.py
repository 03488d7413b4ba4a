"""Hybrid AC/DC microgrid power flow, sensitivity analysis, and real-time control."""

__version__ = "0.1.0"
