"""Steady barotropic compressible flow on the unit square with slip boundary
conditions, solved by elliptic regularization and fixed-point iteration."""

__version__ = "0.1.0"
