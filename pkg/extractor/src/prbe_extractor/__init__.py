"""Per-layer frame-embedding extraction from frozen speech encoders."""

__version__ = "0.1.0"
