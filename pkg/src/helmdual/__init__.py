"""Numerical laboratory for the dual variational treatment of -Delta u - u = Q |u|^{2*-2} u."""

from .fundsol import DimensionContext

__all__ = ["DimensionContext"]
__version__ = "0.1.0"
