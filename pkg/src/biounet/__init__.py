"""Explainable lesion diagnosis with Grad-CAM heatmap stacks and U-Net mask reconstruction."""
__version__ = "0.1.0"
