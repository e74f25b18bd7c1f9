"""Probing toolkit for frozen speech-encoder embeddings on bioacoustic tasks."""

__version__ = "0.1.0"
