"""Invariant tori of linear skew-product systems with semi-axis exponential dichotomies."""

__version__ = "0.1.0"
