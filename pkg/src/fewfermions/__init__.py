"""Exact diagonalization of few trapped two-component fermions with contact interactions."""

__version__ = "0.1.0"
