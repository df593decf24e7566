"""Spectral asymptotics of order-one isotropic perturbations of the harmonic oscillator."""

__version__ = "0.1.0"
