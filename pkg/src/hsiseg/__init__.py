"""Hyperspectral semantic segmentation pipeline.

Spatial-spectral feature extraction, a small MLP classifier with per-pixel
class probabilities, undirected-graphical-model post-processing over pixel
labels, and a reproducible low-shot experiment harness.
"""

__version__ = "0.1.0"
