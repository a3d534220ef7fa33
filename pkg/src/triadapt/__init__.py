"""Triangular-split low-rank adapters with budgeted adaptive rank growth."""

__version__ = "0.1.0"
