"""Preference-conditioned Pareto set learning for combinatorial problems."""

__version__ = "0.1.0"
