"""Soft n-gram interaction matching of label names against text, for long-tail multi-label classification."""

__version__ = "0.1.0"
