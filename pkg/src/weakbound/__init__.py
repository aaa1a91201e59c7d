"""Bound states of Dirichlet Laplacians in weakly deformed strips and layers."""

__version__ = "0.1.0"
