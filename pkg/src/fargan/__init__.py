"""Fake-as-real GAN training, local-optimum analysis and synthetic experiments."""

__version__ = "0.1.0"
