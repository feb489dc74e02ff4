"""Adaptive graph convolution with spatial/temporal/channel attention for skeleton action recognition."""

__version__ = "0.1.0"
