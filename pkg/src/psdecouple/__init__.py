"""Spectral experiments on P/S mode coupling for isotropic elastic waves in C^{1,1} media."""

__version__ = "0.1.0"
