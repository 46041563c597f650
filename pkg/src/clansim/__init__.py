"""Desk-scale simulator for compressed, error-feedback gradient aggregation with layer-wise adaptive optimizers."""

__version__ = "0.1.0"
