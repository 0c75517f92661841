"""Upscaled-video detection with a combined contrastive and supervised objective."""

__version__ = "0.1.0"
