"""Numerical laboratory for SL(2,R) Schrodinger cocycles and slow potential deformation."""

__version__ = "0.1.0"
