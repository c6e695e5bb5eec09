"""Discrete Hodge spectra under conformal deformations."""

__version__ = "0.1.0"
