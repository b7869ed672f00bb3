"""Dependent sequences with invariant NEF-QVF conjugate marginals."""

__version__ = "0.1.0"
