"""Triplet-loss audio embeddings from class-agnostic sampling constraints."""

__version__ = "0.1.0"
