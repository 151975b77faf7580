"""Timing, profiling and parallel-coordination workbench."""

__version__ = "0.1.0"
