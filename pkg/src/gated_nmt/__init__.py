"""Desk-scale neural machine translation with context-gated decoder layers."""

__version__ = "0.1.0"
