"""Transformer encoders, multimodal fusion and an MLP head, written against numpy."""

__version__ = "0.1.0"
