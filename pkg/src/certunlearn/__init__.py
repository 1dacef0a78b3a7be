"""Certified unlearning for small feed-forward networks."""

__version__ = "0.1.0"
