"""Quantum arrival-time distributions from joint measurement models."""

__version__ = "0.1.0"
