"""Simulator, mapper and cost model for a ReRAM digital compute-in-memory macro."""

__version__ = "0.1.0"
