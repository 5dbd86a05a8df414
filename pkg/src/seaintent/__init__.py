"""Dual-intention multimodal vessel trajectory prediction."""

__version__ = "0.1.0"
