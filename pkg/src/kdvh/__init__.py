"""Structure-preserving solvers for KdV and its hyperbolic relaxation (KdVH)."""

__version__ = "0.1.0"
