"""Conformal sigma_k curvature flow and eigenvalue solvers on model geometries."""

__version__ = "0.1.0"
