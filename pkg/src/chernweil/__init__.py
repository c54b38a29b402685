"""Numerical Chern-Weil theory for singular bundle maps on chart grids."""
__version__ = "0.1.0"
