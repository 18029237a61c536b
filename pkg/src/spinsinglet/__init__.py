"""Heralded preparation of the spin-1 singlet in a lossy cavity: simulation suite."""

__version__ = "0.1.0"
