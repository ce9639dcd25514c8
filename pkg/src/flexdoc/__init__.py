"""Masked multi-modal field prediction for vector graphic documents."""

__version__ = "0.1.0"
