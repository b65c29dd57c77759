"""Turbulence-aware THz air-to-ground link simulator and power/flight optimizer."""

__version__ = "1.0.0"
