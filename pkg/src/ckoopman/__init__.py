"""Kernel control Koopman operator regression, sketching, POD and LPV-MPC."""

__version__ = '0.1.0'
