"""Counterfactual chart-pair synthesis and preference-data tooling."""

__version__ = "0.1.0"
