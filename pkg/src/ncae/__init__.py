"""Audio anomaly detection with a non-compression convolutional auto-encoder."""

__version__ = "0.1.0"
