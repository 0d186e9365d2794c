"""Noise-adaptive compression and model repositories for quantum neural networks."""

__version__ = "0.1.0"
