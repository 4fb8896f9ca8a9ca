"""Nonlinear hyperspectral unmixing with a model-based autoencoder."""

__version__ = "0.1.0"
