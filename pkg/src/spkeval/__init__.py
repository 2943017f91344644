"""Evaluation toolkit for frame-level speech representations and their discrete units."""

__version__ = "0.1.0"
