"""Tightly-coupled convolutional Transformer toolkit for sequence forecasting."""

__version__ = "0.1.0"
