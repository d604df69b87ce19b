"""Continuous model-guided image-to-image translation on toy data."""

__version__ = "0.1.0"
