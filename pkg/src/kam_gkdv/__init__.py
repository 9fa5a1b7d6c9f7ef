"""Quasi-periodic solutions of quasi-linear gKdV: normal forms, tori and spectra."""

__version__ = "0.1.0"
