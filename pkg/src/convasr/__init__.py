"""Convolutional CTC speech recognizer with layer-freezing transfer training."""

__version__ = "0.1.0"
