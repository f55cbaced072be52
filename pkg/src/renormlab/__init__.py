"""Numerical laboratory for renormalized solutions of -Au = mu on Dirichlet forms."""

__version__ = "0.1.0"
