"""Cross-channel GAN anomaly detection for static-camera video."""

__version__ = "0.1.0"
