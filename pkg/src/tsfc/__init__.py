"""Multivariate time-series classification with GAF/MTF images, a small CNN,
attention pooling over channels, and Grad-CAM explanations."""

__version__ = "0.1.0"
