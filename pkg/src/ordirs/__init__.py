"""Reasoning segmentation over digital-twin scene representations."""

__version__ = "0.1.0"
