"""Rainfall-probability post-processing: masked pre-training, density
labeling, a gradient-checked encoder/decoder, and verification metrics,
all on synthetic gridded forecasts."""

__version__ = "0.1.0"
