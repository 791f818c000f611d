"""Shared-atoms nested mixture models for grouped data."""

__version__ = "0.1.0"
