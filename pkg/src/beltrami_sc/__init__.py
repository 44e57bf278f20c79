"""Beltrami equation solver via glued similarity polygons."""

__version__ = "0.1.0"
