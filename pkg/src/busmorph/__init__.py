"""Contour morphometry features and a small classifier for breast ultrasound masks."""

__version__ = "0.1.0"
