"""Controlled stochastic Volterra equations with jumps: simulation, adjoints and maximum-principle checks."""

__version__ = "0.1.0"
