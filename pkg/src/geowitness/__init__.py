"""Geometry witness toolkit: tangent charts, occupancy metrics, coupling statistics and freeze/replay protocols."""

__version__ = "0.1.0"
