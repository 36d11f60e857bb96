"""Numerics for Fourier extension operators over rectangles."""

__version__ = "0.1.0"
