"""Algorithmic-progress estimation for language models from scaling-law fits."""

__version__ = "0.1.0"
