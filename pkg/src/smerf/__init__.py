"""Tiled radiance-field distillation, baking, and streaming real-time rendering."""

__version__ = "0.1.0"
