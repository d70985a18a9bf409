"""Mine and rank negative statements for sparse phrase-valued knowledge bases."""

__version__ = "0.1.0"
