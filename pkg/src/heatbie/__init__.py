"""heatbie: boundary-integral / spectral solver for the forced heat equation
and modified Helmholtz problems on multiply connected 2D domains."""

__version__ = "0.1.0"
