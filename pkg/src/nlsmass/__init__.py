"""Numerical tools for mass concentration in the L2-critical nonlinear Schroedinger equation."""
import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
