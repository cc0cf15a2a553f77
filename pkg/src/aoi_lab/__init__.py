"""Distributed SGD under dependent, aperiodic communication: AoI simulation and dominance analysis."""

__version__ = "0.1.0"
