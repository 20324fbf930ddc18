"""Desk-scale harness for measuring how split leakage inflates quality-prediction scores."""

__version__ = "0.1.0"
