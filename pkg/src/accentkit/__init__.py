"""Accent recognition toolkit: spectrogram features, from-scratch CNN and SVM
classifiers, multi-class metrics and spectrogram comparison tools."""

__version__ = "0.1.0"

CANONICAL_RATE = 16000
DEFAULT_CLASSES = ("english", "arabic", "french", "german", "hindi")
