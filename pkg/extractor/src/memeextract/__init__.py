"""Extractor producing the classifier's input files from raw memes."""

__version__ = "0.1.0"
