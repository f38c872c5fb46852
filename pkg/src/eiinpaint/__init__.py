"""Monochrome-bottleneck inpainting: complete structure in gray, restore color by per-image learning."""

__version__ = "0.1.0"
