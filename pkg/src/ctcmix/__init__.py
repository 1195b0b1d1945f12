"""Manifold mixup for CTC-trained text line recognizers."""

__version__ = "0.1.0"
