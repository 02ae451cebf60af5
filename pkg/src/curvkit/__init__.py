"""Nonlocal mean curvature, perimeters and curvature flows for general kernels."""

__version__ = "0.1.0"
