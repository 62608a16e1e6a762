"""Frame-level detection and classification of animal calls in raw audio."""

__version__ = "0.1.0"
