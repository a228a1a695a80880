"""Self-attentional classifier for short 2D pose sequences."""

__version__ = "0.1.0"
