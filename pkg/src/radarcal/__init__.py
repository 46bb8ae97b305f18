"""Synthetic radar ROI benchmark for studying label smoothing and confidence calibration."""

__version__ = "0.1.0"
