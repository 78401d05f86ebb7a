"""Norm bounds, stability criteria and region estimates for x' = A(t) x + f(t, x) + F(t)."""

__version__ = "0.1.0"
